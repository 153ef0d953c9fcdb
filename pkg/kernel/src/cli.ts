/**
 * Kernel entry point.
 *
 * `node cli.js serve` reads request frames from stdin until EOF and writes
 * one JSON response line per frame. `node cli.js <op> <gt.lmap> <pred.lmap>`
 * scores one pair of label-map files and prints the same JSON line. The
 * reported `ns` covers the metric computation only, so it measures what a
 * zero-copy in-process binding would spend.
 */

import { hausdorff } from './hausdorff';
import { computeLabelStats } from './labelstats';
import { ajiFromStats, f1FromStats, pqFromStats } from './metrics';
import {
  HEADER_BYTES,
  KernelError,
  OP_NAMES,
  parseHeader,
  readInt32Buffer,
  readLabelMapFile,
} from './protocol';

function computeResult(op: string, gt: Int32Array, pred: Int32Array,
                       height: number, width: number): object {
  switch (op) {
    case 'aji':
      return { aji: ajiFromStats(computeLabelStats(gt, pred)) };
    case 'pq':
      return pqFromStats(computeLabelStats(gt, pred));
    case 'f1':
      return { f1: f1FromStats(computeLabelStats(gt, pred)) };
    case 'hausdorff':
      return { hausdorff: hausdorff(gt, pred, height, width) };
    case 'contingency': {
      const stats = computeLabelStats(gt, pred);
      const overlaps: Record<string, number> = {};
      for (const cell of stats.cells) overlaps[`${cell.g},${cell.p}`] = cell.count;
      const gtAreas: Record<string, number> = {};
      for (const [id, area] of stats.gtArea) gtAreas[String(id)] = area;
      const predAreas: Record<string, number> = {};
      for (const [id, area] of stats.predArea) predAreas[String(id)] = area;
      return { overlaps, gt_areas: gtAreas, pred_areas: predAreas };
    }
    case 'all': {
      const stats = computeLabelStats(gt, pred);
      return {
        aji: ajiFromStats(stats),
        f1: f1FromStats(stats),
        ...pqFromStats(stats),
      };
    }
    default:
      throw new KernelError('bad_request', `unknown op '${op}'`);
  }
}

function respond(line: object): void {
  process.stdout.write(JSON.stringify(line) + '\n');
}

function respondError(err: unknown): void {
  if (err instanceof KernelError) {
    respond({ ok: false, code: err.code, message: err.message });
  } else {
    respond({ ok: false, code: 'bad_request', message: String(err) });
  }
}

/** Score one extracted frame and write the response line. */
function handleFrame(op: number, height: number, width: number, body: Buffer): void {
  const name = OP_NAMES[op];
  if (name === undefined) {
    respond({ ok: false, code: 'bad_request', message: `unknown op code ${op}` });
    return;
  }
  const count = height * width;
  const gt = readInt32Buffer(body, 0, count);
  const pred = readInt32Buffer(body, 4 * count, count);
  try {
    const t0 = process.hrtime.bigint();
    const result = computeResult(name, gt, pred, height, width);
    const ns = Number(process.hrtime.bigint() - t0);
    respond({ ok: true, result, ns });
  } catch (err) {
    respondError(err);
  }
}

/** Incremental frame assembler over arbitrary stdin chunking. */
class FrameReader {
  private header = Buffer.alloc(HEADER_BYTES);
  private headerGot = 0;
  private body: Buffer | null = null;
  private bodyGot = 0;

  feed(chunk: Buffer): void {
    let offset = 0;
    while (offset < chunk.length) {
      if (this.body === null) {
        const take = Math.min(HEADER_BYTES - this.headerGot, chunk.length - offset);
        chunk.copy(this.header, this.headerGot, offset, offset + take);
        this.headerGot += take;
        offset += take;
        if (this.headerGot < HEADER_BYTES) return;
        const parsed = parseHeader(this.header);   // throws on bad magic
        this.body = Buffer.alloc(8 * parsed.height * parsed.width);
        this.bodyGot = 0;
      }
      const need = this.body.length - this.bodyGot;
      const take = Math.min(need, chunk.length - offset);
      chunk.copy(this.body, this.bodyGot, offset, offset + take);
      this.bodyGot += take;
      offset += take;
      if (this.bodyGot < this.body.length) return;
      const { op, height, width } = parseHeader(this.header);
      handleFrame(op, height, width, this.body);
      this.headerGot = 0;
      this.body = null;
    }
  }
}

function serve(): void {
  const reader = new FrameReader();
  process.stdin.on('data', (chunk: Buffer) => {
    try {
      reader.feed(chunk);
    } catch (err) {
      // a bad header desynchronizes the stream; report and bail out
      respondError(err);
      process.exit(1);
    }
  });
  process.stdin.on('end', () => process.exit(0));
}

function scoreFiles(op: string, gtPath: string, predPath: string): number {
  try {
    const gt = readLabelMapFile(gtPath);
    const pred = readLabelMapFile(predPath);
    if (gt.height !== pred.height || gt.width !== pred.width) {
      throw new KernelError(
        'shape_mismatch',
        `gt ${gt.height}x${gt.width} vs pred ${pred.height}x${pred.width}`);
    }
    const t0 = process.hrtime.bigint();
    const result = computeResult(op, gt.data, pred.data, gt.height, gt.width);
    const ns = Number(process.hrtime.bigint() - t0);
    respond({ ok: true, result, ns });
    return 0;
  } catch (err) {
    respondError(err);
    return 1;
  }
}

function main(argv: string[]): number {
  if (argv.length === 1 && argv[0] === 'serve') {
    serve();
    return 0;
  }
  if (argv.length === 3 && Object.values(OP_NAMES).includes(argv[0])) {
    return scoreFiles(argv[0], argv[1], argv[2]);
  }
  process.stderr.write(
    'usage: cli.js serve\n' +
    '       cli.js <aji|pq|f1|hausdorff|contingency|all> <gt.lmap> <pred.lmap>\n');
  return 2;
}

if (require.main === module) {
  const code = main(process.argv.slice(2));
  if (code !== 0) process.exitCode = code;
}
