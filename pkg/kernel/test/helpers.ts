/** Shared test utilities: seeded RNG, random label maps, brute-force oracles. */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randInt(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

/** Random label map: overlapping painted rectangles, possibly re-using ids. */
export function randomLabelMap(
  rng: () => number,
  size: number,
  maxInstances: number,
): Int32Array {
  const map = new Int32Array(size * size);
  const n = randInt(rng, 0, maxInstances);
  for (let k = 1; k <= n; k++) {
    const id = rng() < 0.2 ? randInt(rng, 1, maxInstances) : k;
    const h = randInt(rng, 1, Math.max(1, size >> 1));
    const w = randInt(rng, 1, Math.max(1, size >> 1));
    const y0 = randInt(rng, 0, size - h);
    const x0 = randInt(rng, 0, size - w);
    for (let y = y0; y < y0 + h; y++) {
      for (let x = x0; x < x0 + w; x++) map[y * size + x] = id;
    }
  }
  return map;
}

export interface OracleStats {
  gtArea: Map<number, number>;
  gtFirst: Map<number, number>;
  predArea: Map<number, number>;
  predFirst: Map<number, number>;
  /** overlap count keyed "g,p", both ids > 0 */
  overlaps: Map<string, number>;
}

/** Direct per-pixel tally, the oracle for the single-pass implementation. */
export function oracleStats(gt: Int32Array, pred: Int32Array): OracleStats {
  const out: OracleStats = {
    gtArea: new Map(),
    gtFirst: new Map(),
    predArea: new Map(),
    predFirst: new Map(),
    overlaps: new Map(),
  };
  for (let i = 0; i < gt.length; i++) {
    const g = gt[i];
    const p = pred[i];
    if (g !== 0) {
      out.gtArea.set(g, (out.gtArea.get(g) ?? 0) + 1);
      if (!out.gtFirst.has(g)) out.gtFirst.set(g, i);
    }
    if (p !== 0) {
      out.predArea.set(p, (out.predArea.get(p) ?? 0) + 1);
      if (!out.predFirst.has(p)) out.predFirst.set(p, i);
    }
    if (g > 0 && p > 0) {
      const key = `${g},${p}`;
      out.overlaps.set(key, (out.overlaps.get(key) ?? 0) + 1);
    }
  }
  return out;
}

function iouOf(inter: number, a: number, b: number): number {
  return inter === 0 ? 0 : inter / (a + b - inter);
}

/**
 * AJI oracle: literal transcription of the matching rule. Ground truths by
 * descending area then first pixel; each takes the unused overlapping
 * prediction maximizing (IoU, intersection, -first pixel); leftovers of both
 * kinds land in the denominator.
 */
export function ajiOracle(gt: Int32Array, pred: Int32Array): number {
  const s = oracleStats(gt, pred);
  if (s.gtArea.size === 0 && s.predArea.size === 0) return 1.0;
  const order = [...s.gtArea.keys()].sort(
    (x, y) => s.gtArea.get(y)! - s.gtArea.get(x)! || s.gtFirst.get(x)! - s.gtFirst.get(y)!);
  const used = new Set<number>();
  let num = 0;
  let den = 0;
  for (const g of order) {
    let bestP = -1;
    let bestKey: [number, number, number] | null = null;
    for (const [key, inter] of s.overlaps) {
      const [gg, p] = key.split(',').map(Number);
      if (gg !== g || used.has(p)) continue;
      const cand: [number, number, number] = [
        iouOf(inter, s.gtArea.get(g)!, s.predArea.get(p)!), inter, -s.predFirst.get(p)!];
      if (
        bestKey === null ||
        cand[0] > bestKey[0] ||
        (cand[0] === bestKey[0] && cand[1] > bestKey[1]) ||
        (cand[0] === bestKey[0] && cand[1] === bestKey[1] && cand[2] > bestKey[2])
      ) {
        bestKey = cand;
        bestP = p;
      }
    }
    if (bestP < 0) {
      den += s.gtArea.get(g)!;
      continue;
    }
    used.add(bestP);
    const inter = s.overlaps.get(`${g},${bestP}`)!;
    num += inter;
    den += s.gtArea.get(g)! + s.predArea.get(bestP)! - inter;
  }
  for (const [p, area] of s.predArea) {
    if (!used.has(p)) den += area;
  }
  return den === 0 ? 1.0 : num / den;
}

/**
 * Strict IoU > 0.5 matches. Above 0.5 each instance can so-overlap with at
 * most one partner, so the match set is unique without any greedy ordering;
 * that independence is what makes this an oracle for the greedy matcher.
 */
export function strictMatches(gt: Int32Array, pred: Int32Array): Array<[number, number, number]> {
  const s = oracleStats(gt, pred);
  const matches: Array<[number, number, number]> = [];
  for (const [key, inter] of s.overlaps) {
    const [g, p] = key.split(',').map(Number);
    const iou = iouOf(inter, s.gtArea.get(g)!, s.predArea.get(p)!);
    if (iou > 0.5) matches.push([g, p, iou]);
  }
  return matches;
}

export function f1Oracle(gt: Int32Array, pred: Int32Array): number {
  const s = oracleStats(gt, pred);
  if (s.gtArea.size === 0 && s.predArea.size === 0) return 1.0;
  const tp = strictMatches(gt, pred).length;
  return (2 * tp) / (2 * tp + (s.predArea.size - tp) + (s.gtArea.size - tp));
}

export function pqOracle(gt: Int32Array, pred: Int32Array): { pq: number; sq: number; rq: number } {
  const s = oracleStats(gt, pred);
  if (s.gtArea.size === 0 && s.predArea.size === 0) return { pq: 1, sq: 1, rq: 1 };
  const matches = strictMatches(gt, pred);
  const tp = matches.length;
  const rq = tp / (tp + 0.5 * (s.predArea.size - tp) + 0.5 * (s.gtArea.size - tp));
  const sq = tp ? matches.reduce((acc, m) => acc + m[2], 0) / tp : 0;
  return { pq: sq * rq, sq, rq };
}

/** O(n^2) Hausdorff oracle over explicitly collected boundary pixels. */
export function hausdorffOracle(
  gt: Int32Array,
  pred: Int32Array,
  h: number,
  w: number,
): number | 'empty' {
  const boundary = (map: Int32Array): Array<[number, number]> => {
    const pts: Array<[number, number]> = [];
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const i = y * w + x;
        if (map[i] === 0) continue;
        const edge =
          y === 0 || y === h - 1 || x === 0 || x === w - 1 ||
          map[i - w] === 0 || map[i + w] === 0 || map[i - 1] === 0 || map[i + 1] === 0;
        if (edge) pts.push([y, x]);
      }
    }
    return pts;
  };
  const a = boundary(pred);
  const b = boundary(gt);
  if (a.length === 0 || b.length === 0) return 'empty';
  const oneWay = (from: Array<[number, number]>, to: Array<[number, number]>): number => {
    let worst = 0;
    for (const [y, x] of from) {
      let best = Infinity;
      for (const [v, u] of to) {
        const d = (y - v) * (y - v) + (x - u) * (x - u);
        if (d < best) best = d;
      }
      if (best > worst) worst = best;
    }
    return worst;
  };
  return Math.sqrt(Math.max(oneWay(a, b), oneWay(b, a)));
}
