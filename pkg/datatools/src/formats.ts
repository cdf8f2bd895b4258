/**
 * Binary vector file formats used by the index CLI.
 *
 * fvecs/ivecs framing: every record is a little-endian int32 dimension
 * followed by that many float32 (or int32) payload values. Readers reject
 * truncated or inconsistently framed files with the byte offset at fault,
 * and round-trip float payloads bit-exactly.
 */

import { readFileSync, writeFileSync } from "node:fs";

export class FormatError extends Error {}

export interface Matrix32 {
  rows: number;
  dim: number;
  /** row-major payload; Float32Array for fvecs, Int32Array for ivecs */
  data: Float32Array | Int32Array;
}

function encodeVecs(data: Float32Array | Int32Array, rows: number, dim: number): Buffer {
  if (data.length !== rows * dim) {
    throw new FormatError(`payload length ${data.length} != rows*dim ${rows * dim}`);
  }
  const out = Buffer.alloc(rows * (4 + 4 * dim));
  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  for (let r = 0; r < rows; r++) {
    const offset = r * (4 + 4 * dim);
    out.writeInt32LE(dim, offset);
    payload.copy(out, offset + 4, r * dim * 4, (r + 1) * dim * 4);
  }
  return out;
}

function decodeVecs(buf: Buffer, path: string): { rows: number; dim: number; payload: Buffer } {
  if (buf.length < 4) {
    throw new FormatError(`${path}: truncated header at byte 0`);
  }
  const dim = buf.readInt32LE(0);
  if (dim <= 0) {
    throw new FormatError(`${path}: non-positive dimension ${dim} at byte 0`);
  }
  const rec = 4 + 4 * dim;
  if (buf.length % rec !== 0) {
    // walk the records to report the exact offence
    let pos = 0;
    while (pos < buf.length) {
      if (buf.length - pos < 4) {
        throw new FormatError(`${path}: truncated record header at byte ${pos}`);
      }
      const d = buf.readInt32LE(pos);
      if (d <= 0) {
        throw new FormatError(`${path}: non-positive dimension ${d} at byte ${pos}`);
      }
      if (d !== dim) {
        throw new FormatError(`${path}: inconsistent dimension ${d} != ${dim} at byte ${pos}`);
      }
      if (buf.length - pos < 4 + 4 * d) {
        throw new FormatError(`${path}: truncated record payload at byte ${pos}`);
      }
      pos += 4 + 4 * d;
    }
    throw new FormatError(`${path}: malformed framing`);
  }
  const rows = buf.length / rec;
  const payload = Buffer.alloc(rows * dim * 4);
  for (let r = 0; r < rows; r++) {
    const offset = r * rec;
    const d = buf.readInt32LE(offset);
    if (d !== dim) {
      throw new FormatError(`${path}: inconsistent dimension ${d} != ${dim} at byte ${offset}`);
    }
    buf.copy(payload, r * dim * 4, offset + 4, offset + 4 + dim * 4);
  }
  return { rows, dim, payload };
}

export function writeFvecs(path: string, data: Float32Array, rows: number, dim: number): void {
  writeFileSync(path, encodeVecs(data, rows, dim));
}

export function readFvecs(path: string): Matrix32 {
  const { rows, dim, payload } = decodeVecs(readFileSync(path), path);
  return { rows, dim, data: new Float32Array(payload.buffer, payload.byteOffset, rows * dim) };
}

export function writeIvecs(path: string, data: Int32Array, rows: number, dim: number): void {
  writeFileSync(path, encodeVecs(data, rows, dim));
}

export function readIvecs(path: string): Matrix32 {
  const { rows, dim, payload } = decodeVecs(readFileSync(path), path);
  return { rows, dim, data: new Int32Array(payload.buffer, payload.byteOffset, rows * dim) };
}

/** Streaming fvecs writer: appends row blocks without holding the matrix. */
export class VecsWriter {
  private chunks: Buffer[] = [];
  private rows = 0;

  constructor(private readonly dim: number) {}

  append(block: Float32Array | Int32Array): void {
    if (block.length % this.dim !== 0) {
      throw new FormatError(`block length ${block.length} not a multiple of dim ${this.dim}`);
    }
    const rows = block.length / this.dim;
    this.chunks.push(encodeVecs(block, rows, this.dim));
    this.rows += rows;
  }

  get rowCount(): number {
    return this.rows;
  }

  save(path: string): void {
    writeFileSync(path, Buffer.concat(this.chunks));
  }
}
