/**
 * Wire and file formats.
 *
 * Request frame: 16-byte header (magic "LMRQ", op u8, flags u8, reserved
 * u16, height u32, width u32, all little endian) followed by the ground
 * truth and prediction buffers, each height*width int32 little endian,
 * row-major. Response: one JSON line, {"ok":true,"result":...,"ns":...}
 * on success, {"ok":false,"code":...,"message":...} on error.
 *
 * Label map file: magic "LMAP", height u32, width u32, then one int32
 * buffer with the same layout.
 */

import { readFileSync } from 'fs';

export const FRAME_MAGIC = 'LMRQ';
export const MAP_MAGIC = 'LMAP';
export const HEADER_BYTES = 16;

export const OP_NAMES: Record<number, string> = {
  1: 'aji',
  2: 'pq',
  3: 'f1',
  4: 'hausdorff',
  5: 'contingency',
  6: 'all',
};

export type ErrorCode = 'shape_mismatch' | 'empty_mask' | 'bad_request' | 'bad_file';

export class KernelError extends Error {
  constructor(public readonly code: ErrorCode, message: string) {
    super(message);
    this.name = 'KernelError';
  }
}

export interface FrameHeader {
  op: number;
  flags: number;
  height: number;
  width: number;
}

export function parseHeader(buf: Buffer): FrameHeader {
  if (buf.length < HEADER_BYTES) {
    throw new KernelError('bad_request', `short header: ${buf.length} bytes`);
  }
  if (buf.toString('latin1', 0, 4) !== FRAME_MAGIC) {
    throw new KernelError('bad_request', 'bad frame magic');
  }
  return {
    op: buf.readUInt8(4),
    flags: buf.readUInt8(5),
    height: buf.readUInt32LE(8),
    width: buf.readUInt32LE(12),
  };
}

/** Copy `count` little-endian int32 values out of a (possibly unaligned) buffer. */
export function readInt32Buffer(buf: Buffer, offset: number, count: number): Int32Array {
  const out = new Int32Array(count);
  const bytes = Buffer.from(out.buffer);
  buf.copy(bytes, 0, offset, offset + 4 * count);
  return out;
}

export interface LabelMap {
  height: number;
  width: number;
  data: Int32Array;
}

export function readLabelMapFile(path: string): LabelMap {
  let raw: Buffer;
  try {
    raw = readFileSync(path);
  } catch (err) {
    throw new KernelError('bad_file', `${path}: ${(err as Error).message}`);
  }
  if (raw.length < 12 || raw.toString('latin1', 0, 4) !== MAP_MAGIC) {
    throw new KernelError('bad_file', `${path}: not a label-map file`);
  }
  const height = raw.readUInt32LE(4);
  const width = raw.readUInt32LE(8);
  if (raw.length !== 12 + 4 * height * width) {
    throw new KernelError('bad_file', `${path}: expected ${height}x${width} int32 payload`);
  }
  return { height, width, data: readInt32Buffer(raw, 12, height * width) };
}
