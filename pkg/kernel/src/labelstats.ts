/**
 * Contingency statistics for a pair of int32 label maps.
 *
 * Background (id 0) is excluded everywhere. Areas and first raster indices
 * cover every nonzero id; overlap cells count only pixels where both maps
 * carry a positive id. These are exactly the quantities every instance
 * metric downstream needs, collected in one pass over the two buffers.
 *
 * When both maps use small non-negative ids the pass runs over a dense
 * (gtMax + 1) x (predMax + 1) table of 32-bit counters, which is what makes
 * the kernel fast on big label maps: per pixel it costs a handful of typed
 * array operations, and nonzero cells are recorded as they first appear so
 * no full table sweep is needed afterwards. The table is cached between
 * calls and re-zeroed cell by cell on exit, keeping the zero-table invariant
 * without reallocating megabytes per request. Maps with huge or negative
 * ids fall back to hash maps; correctness is identical.
 */

/** One nonzero overlap cell: `count` pixels carry gt id `g` and pred id `p`. */
export interface Cell {
  g: number;
  p: number;
  count: number;
}

export interface LabelStats {
  gtArea: Map<number, number>;
  gtFirst: Map<number, number>;
  predArea: Map<number, number>;
  predFirst: Map<number, number>;
  cells: Cell[];
}

/** Largest dense contingency table we are willing to allocate (cells). */
const DENSE_CELL_LIMIT = 1 << 24;
/** Largest dense table kept alive between calls. */
const CACHED_CELL_LIMIT = 1 << 22;

let cachedTable = new Int32Array(0);

export function intersectionOverUnion(
  inter: number,
  gtArea: number,
  predArea: number,
): number {
  if (inter === 0) return 0.0;
  return inter / (gtArea + predArea - inter);
}

interface Extrema {
  gtMin: number;
  gtMax: number;
  predMin: number;
  predMax: number;
}

function scanExtrema(gt: Int32Array, pred: Int32Array): Extrema {
  let gtMin = 0;
  let gtMax = 0;
  let predMin = 0;
  let predMax = 0;
  for (let i = 0; i < gt.length; i++) {
    const g = gt[i];
    const p = pred[i];
    if (g > gtMax) gtMax = g;
    if (g < gtMin) gtMin = g;
    if (p > predMax) predMax = p;
    if (p < predMin) predMin = p;
  }
  return { gtMin, gtMax, predMin, predMax };
}

function denseStats(
  gt: Int32Array,
  pred: Int32Array,
  gtMax: number,
  predMax: number,
): LabelStats {
  const stride = predMax + 1;
  const cellsNeeded = (gtMax + 1) * stride;
  let table: Int32Array;
  if (cellsNeeded <= CACHED_CELL_LIMIT) {
    if (cachedTable.length < cellsNeeded) cachedTable = new Int32Array(cellsNeeded);
    table = cachedTable;
  } else {
    table = new Int32Array(cellsNeeded);
  }
  const gArea = new Int32Array(gtMax + 1);
  const gFirst = new Int32Array(gtMax + 1);
  const pArea = new Int32Array(predMax + 1);
  const pFirst = new Int32Array(predMax + 1);
  const touched: number[] = [];

  for (let i = 0; i < gt.length; i++) {
    const g = gt[i];
    const p = pred[i];
    if (g !== 0) {
      if (gArea[g]++ === 0) gFirst[g] = i;
      if (p !== 0) {
        const idx = g * stride + p;
        if (table[idx]++ === 0) touched.push(idx);
      }
    }
    if (p !== 0) {
      if (pArea[p]++ === 0) pFirst[p] = i;
    }
  }

  const stats: LabelStats = {
    gtArea: new Map(),
    gtFirst: new Map(),
    predArea: new Map(),
    predFirst: new Map(),
    cells: new Array(touched.length),
  };
  for (let g = 1; g <= gtMax; g++) {
    if (gArea[g] !== 0) {
      stats.gtArea.set(g, gArea[g]);
      stats.gtFirst.set(g, gFirst[g]);
    }
  }
  for (let p = 1; p <= predMax; p++) {
    if (pArea[p] !== 0) {
      stats.predArea.set(p, pArea[p]);
      stats.predFirst.set(p, pFirst[p]);
    }
  }
  for (let k = 0; k < touched.length; k++) {
    const idx = touched[k];
    stats.cells[k] = { g: (idx / stride) | 0, p: idx % stride, count: table[idx] };
    table[idx] = 0;   // restore the zero-table invariant for the next call
  }
  return stats;
}

function sparseStats(gt: Int32Array, pred: Int32Array): LabelStats {
  const gtArea = new Map<number, number>();
  const gtFirst = new Map<number, number>();
  const predArea = new Map<number, number>();
  const predFirst = new Map<number, number>();
  const overlaps = new Map<number, Map<number, number>>();

  for (let i = 0; i < gt.length; i++) {
    const g = gt[i];
    const p = pred[i];
    if (g !== 0) {
      const a = gtArea.get(g);
      if (a === undefined) {
        gtArea.set(g, 1);
        gtFirst.set(g, i);
      } else {
        gtArea.set(g, a + 1);
      }
      if (g > 0 && p > 0) {
        let row = overlaps.get(g);
        if (row === undefined) {
          row = new Map<number, number>();
          overlaps.set(g, row);
        }
        row.set(p, (row.get(p) ?? 0) + 1);
      }
    }
    if (p !== 0) {
      const a = predArea.get(p);
      if (a === undefined) {
        predArea.set(p, 1);
        predFirst.set(p, i);
      } else {
        predArea.set(p, a + 1);
      }
    }
  }

  const cells: Cell[] = [];
  for (const [g, row] of overlaps) {
    for (const [p, count] of row) {
      cells.push({ g, p, count });
    }
  }
  return { gtArea, gtFirst, predArea, predFirst, cells };
}

export function computeLabelStats(gt: Int32Array, pred: Int32Array): LabelStats {
  if (gt.length !== pred.length) {
    throw new Error(`buffer length mismatch: gt ${gt.length} vs pred ${pred.length}`);
  }
  const ex = scanExtrema(gt, pred);
  const cellsNeeded = (ex.gtMax + 1) * (ex.predMax + 1);
  if (ex.gtMin >= 0 && ex.predMin >= 0 && cellsNeeded <= DENSE_CELL_LIMIT) {
    return denseStats(gt, pred, ex.gtMax, ex.predMax);
  }
  return sparseStats(gt, pred);
}
