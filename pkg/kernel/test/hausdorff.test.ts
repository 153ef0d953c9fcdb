import { describe, expect, it } from 'vitest';

import { boundaryMask, hausdorff, squaredDistanceTransform } from '../src/hausdorff';
import { KernelError } from '../src/protocol';
import { hausdorffOracle, mulberry32, randInt, randomLabelMap } from './helpers';

describe('boundaryMask', () => {
  it('marks foreground touching background or the border', () => {
    // 3x3 solid block inside 5x5: center pixel is interior
    const map = new Int32Array(25);
    for (let y = 1; y <= 3; y++) {
      for (let x = 1; x <= 3; x++) map[y * 5 + x] = 7;
    }
    const b = boundaryMask(map, 5, 5);
    expect(b[2 * 5 + 2]).toBe(0);
    expect(Array.from(b).reduce((a, v) => a + v, 0)).toBe(8);
  });

  it('treats pixels beyond the image as background', () => {
    const map = new Int32Array(9).fill(1);     // full 3x3: everything is boundary
    const b = boundaryMask(map, 3, 3);
    expect(Array.from(b).every((v, i) => (i === 4 ? v === 0 : v === 1))).toBe(true);
  });
});

describe('squaredDistanceTransform', () => {
  it('matches direct distances from a single seed', () => {
    const h = 7;
    const w = 9;
    const grid = new Float64Array(h * w).fill(1e20);
    grid[3 * w + 4] = 0;
    squaredDistanceTransform(grid, h, w);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        expect(grid[y * w + x]).toBe((y - 3) * (y - 3) + (x - 4) * (x - 4));
      }
    }
  });
});

describe('hausdorff', () => {
  it('two single pixels: the distance between them', () => {
    const gt = new Int32Array(30);
    const pred = new Int32Array(30);
    gt[0] = 1;                 // (0, 0)
    pred[4 * 6 + 3] = 1;       // (4, 3) on a 5x6 grid
    expect(hausdorff(gt, pred, 5, 6)).toBe(5.0);
  });

  it('identical masks give zero', () => {
    const rng = mulberry32(21);
    const m = randomLabelMap(rng, 16, 5);
    if (m.some((v) => v !== 0)) {
      expect(hausdorff(m, m, 16, 16)).toBe(0.0);
    }
  });

  it('matches the quadratic oracle on random masks', () => {
    const rng = mulberry32(77);
    let checked = 0;
    for (let trial = 0; trial < 120; trial++) {
      const size = randInt(rng, 2, 28);
      const gt = randomLabelMap(rng, size, 6);
      const pred = randomLabelMap(rng, size, 6);
      const want = hausdorffOracle(gt, pred, size, size);
      if (want === 'empty') continue;
      expect(hausdorff(gt, pred, size, size)).toBeCloseTo(want, 12);
      checked++;
    }
    expect(checked).toBeGreaterThan(60);
  });

  it('raises empty_mask naming the empty side', () => {
    const empty = new Int32Array(16);
    const full = new Int32Array(16).fill(1);
    expect(() => hausdorff(full, empty, 4, 4)).toThrowError(KernelError);
    try {
      hausdorff(full, empty, 4, 4);
    } catch (err) {
      expect((err as KernelError).code).toBe('empty_mask');
      expect((err as KernelError).message).toMatch(/prediction/);
    }
    try {
      hausdorff(empty, full, 4, 4);
    } catch (err) {
      expect((err as KernelError).code).toBe('empty_mask');
      expect((err as KernelError).message).toMatch(/ground truth/);
    }
  });
});
