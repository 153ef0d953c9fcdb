/**
 * Symmetric Hausdorff distance between the boundaries of two masks.
 *
 * Boundary pixels are foreground pixels (nonzero) with at least one
 * four-neighbor that is background; pixels outside the image count as
 * background, so foreground touching the border is boundary. Distances are
 * exact Euclidean, via the Felzenszwalb-Huttenlocher squared distance
 * transform seeded on one boundary and sampled on the other. Squared
 * distances are integers well below 2^53, so the result is exact.
 */

import { KernelError } from './protocol';

const INF = 1e20;

/** 1 where map is nonzero and at least one four-neighbor is background. */
export function boundaryMask(map: Int32Array, h: number, w: number): Uint8Array {
  const out = new Uint8Array(h * w);
  for (let y = 0; y < h; y++) {
    const row = y * w;
    for (let x = 0; x < w; x++) {
      const i = row + x;
      if (map[i] === 0) continue;
      if (
        y === 0 || y === h - 1 || x === 0 || x === w - 1 ||
        map[i - w] === 0 || map[i + w] === 0 || map[i - 1] === 0 || map[i + 1] === 0
      ) {
        out[i] = 1;
      }
    }
  }
  return out;
}

/** One-dimensional squared distance transform of sampled function f. */
function transform1d(
  f: Float64Array,
  n: number,
  d: Float64Array,
  v: Int32Array,
  z: Float64Array,
): void {
  let k = 0;
  v[0] = 0;
  z[0] = -INF;
  z[1] = INF;
  for (let q = 1; q < n; q++) {
    let s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k]);
    while (s <= z[k]) {
      k--;
      s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k]);
    }
    k++;
    v[k] = q;
    z[k] = s;
    z[k + 1] = INF;
  }
  k = 0;
  for (let q = 0; q < n; q++) {
    while (z[k + 1] < q) k++;
    const dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

/** In-place 2-D squared Euclidean distance transform (0 at seeds, INF elsewhere). */
export function squaredDistanceTransform(grid: Float64Array, h: number, w: number): void {
  const side = Math.max(h, w);
  const f = new Float64Array(side);
  const d = new Float64Array(side);
  const v = new Int32Array(side);
  const z = new Float64Array(side + 1);

  for (let x = 0; x < w; x++) {
    for (let y = 0; y < h; y++) f[y] = grid[y * w + x];
    transform1d(f, h, d, v, z);
    for (let y = 0; y < h; y++) grid[y * w + x] = d[y];
  }
  for (let y = 0; y < h; y++) {
    const row = y * w;
    for (let x = 0; x < w; x++) f[x] = grid[row + x];
    transform1d(f, w, d, v, z);
    for (let x = 0; x < w; x++) grid[row + x] = d[x];
  }
}

function maxSquaredDistance(from: Uint8Array, to: Uint8Array, h: number, w: number): number {
  const grid = new Float64Array(h * w);
  for (let i = 0; i < grid.length; i++) grid[i] = to[i] ? 0 : INF;
  squaredDistanceTransform(grid, h, w);
  let worst = 0;
  for (let i = 0; i < grid.length; i++) {
    if (from[i] && grid[i] > worst) worst = grid[i];
  }
  return worst;
}

/**
 * max-min Euclidean distance between the two boundaries, in pixels.
 * Throws an empty_mask error when either mask has no foreground.
 */
export function hausdorff(gt: Int32Array, pred: Int32Array, h: number, w: number): number {
  const gtBoundary = boundaryMask(gt, h, w);
  const predBoundary = boundaryMask(pred, h, w);
  if (!predBoundary.some((v) => v !== 0)) {
    throw new KernelError('empty_mask', 'empty prediction mask');
  }
  if (!gtBoundary.some((v) => v !== 0)) {
    throw new KernelError('empty_mask', 'empty ground truth mask');
  }
  const predToGt = maxSquaredDistance(predBoundary, gtBoundary, h, w);
  const gtToPred = maxSquaredDistance(gtBoundary, predBoundary, h, w);
  return Math.sqrt(Math.max(predToGt, gtToPred));
}
