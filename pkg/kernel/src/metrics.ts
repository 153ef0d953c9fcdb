/**
 * Instance metrics over contingency statistics: AJI, object F1, and
 * panoptic quality, plus an "all" entry point that scores every metric
 * from a single contingency pass.
 *
 * Tie-breaking is part of the contract. AJI walks ground-truth instances
 * by descending area (then first raster pixel) and matches each to the
 * best unused prediction by (IoU, intersection, earliest first pixel).
 * F1 and PQ match greedily by descending IoU above the strict 0.5
 * threshold, where greedy matching is provably optimal.
 */

import { Cell, LabelStats, computeLabelStats, intersectionOverUnion } from './labelstats';

export interface PanopticQuality {
  pq: number;
  sq: number;
  rq: number;
}

export interface AllMetrics extends PanopticQuality {
  aji: number;
  f1: number;
}

interface MatchedPair {
  g: number;
  p: number;
  iou: number;
}

/** Greedy descending-IoU one-to-one matching, strict IoU > 0.5. */
function matchedPairs(stats: LabelStats): MatchedPair[] {
  interface Candidate {
    iou: number;
    inter: number;
    gFirst: number;
    pFirst: number;
    g: number;
    p: number;
  }
  const candidates: Candidate[] = [];
  for (const cell of stats.cells) {
    const iou = intersectionOverUnion(
      cell.count, stats.gtArea.get(cell.g)!, stats.predArea.get(cell.p)!);
    if (iou > 0.5) {
      candidates.push({
        iou,
        inter: cell.count,
        gFirst: stats.gtFirst.get(cell.g)!,
        pFirst: stats.predFirst.get(cell.p)!,
        g: cell.g,
        p: cell.p,
      });
    }
  }
  candidates.sort((a, b) =>
    b.iou - a.iou || b.inter - a.inter || a.gFirst - b.gFirst || a.pFirst - b.pFirst);

  const matchedG = new Set<number>();
  const matchedP = new Set<number>();
  const pairs: MatchedPair[] = [];
  for (const c of candidates) {
    if (matchedG.has(c.g) || matchedP.has(c.p)) continue;
    matchedG.add(c.g);
    matchedP.add(c.p);
    pairs.push({ g: c.g, p: c.p, iou: c.iou });
  }
  return pairs;
}

/**
 * Aggregated Jaccard index (class-agnostic). Each ground truth, visited by
 * descending area, takes the unused prediction with the highest IoU;
 * unmatched ground truths and unused predictions enlarge the denominator.
 * 1.0 when both maps are empty.
 */
export function ajiFromStats(stats: LabelStats): number {
  if (stats.gtArea.size === 0 && stats.predArea.size === 0) return 1.0;

  const cellsByGt = new Map<number, Cell[]>();
  for (const cell of stats.cells) {
    const row = cellsByGt.get(cell.g);
    if (row === undefined) cellsByGt.set(cell.g, [cell]);
    else row.push(cell);
  }

  const order = [...stats.gtArea.keys()].sort((a, b) =>
    stats.gtArea.get(b)! - stats.gtArea.get(a)! ||
    stats.gtFirst.get(a)! - stats.gtFirst.get(b)!);

  const used = new Set<number>();
  let numerator = 0;
  let denominator = 0;
  for (const g of order) {
    const gArea = stats.gtArea.get(g)!;
    let best: Cell | null = null;
    let bestIou = 0;
    for (const cell of cellsByGt.get(g) ?? []) {
      if (used.has(cell.p)) continue;
      const iou = intersectionOverUnion(cell.count, gArea, stats.predArea.get(cell.p)!);
      if (
        best === null ||
        iou > bestIou ||
        (iou === bestIou && cell.count > best.count) ||
        (iou === bestIou && cell.count === best.count &&
          stats.predFirst.get(cell.p)! < stats.predFirst.get(best.p)!)
      ) {
        best = cell;
        bestIou = iou;
      }
    }
    if (best === null) {
      denominator += gArea;
      continue;
    }
    used.add(best.p);
    numerator += best.count;
    denominator += gArea + stats.predArea.get(best.p)! - best.count;
  }
  for (const [p, area] of stats.predArea) {
    if (!used.has(p)) denominator += area;
  }
  if (denominator === 0) return 1.0;
  return numerator / denominator;
}

/** Object-level F1 = 2TP / (2TP + FP + FN); 1.0 when both maps are empty. */
export function f1FromStats(stats: LabelStats): number {
  const nGt = stats.gtArea.size;
  const nPred = stats.predArea.size;
  if (nGt === 0 && nPred === 0) return 1.0;
  const tp = matchedPairs(stats).length;
  return (2.0 * tp) / (2.0 * tp + (nPred - tp) + (nGt - tp));
}

/**
 * (pq, sq, rq): rq = TP / (TP + FP/2 + FN/2), sq = mean matched IoU
 * (0 without matches), pq = sq * rq exactly. (1, 1, 1) when both maps
 * are empty.
 */
export function pqFromStats(stats: LabelStats): PanopticQuality {
  const nGt = stats.gtArea.size;
  const nPred = stats.predArea.size;
  if (nGt === 0 && nPred === 0) return { pq: 1.0, sq: 1.0, rq: 1.0 };
  const pairs = matchedPairs(stats);
  const tp = pairs.length;
  const denom = tp + 0.5 * (nPred - tp) + 0.5 * (nGt - tp);
  const rq = tp / denom;
  let iouSum = 0.0;
  for (const pair of pairs) iouSum += pair.iou;
  const sq = tp ? iouSum / tp : 0.0;
  return { pq: sq * rq, sq, rq };
}

export function aji(gt: Int32Array, pred: Int32Array): number {
  return ajiFromStats(computeLabelStats(gt, pred));
}

export function objectF1(gt: Int32Array, pred: Int32Array): number {
  return f1FromStats(computeLabelStats(gt, pred));
}

export function panopticQuality(gt: Int32Array, pred: Int32Array): PanopticQuality {
  return pqFromStats(computeLabelStats(gt, pred));
}

/** Every ratio metric from one contingency pass. */
export function allMetrics(gt: Int32Array, pred: Int32Array): AllMetrics {
  const stats = computeLabelStats(gt, pred);
  return { aji: ajiFromStats(stats), f1: f1FromStats(stats), ...pqFromStats(stats) };
}
