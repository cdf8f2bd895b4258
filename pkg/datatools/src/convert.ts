/**
 * HDF5 -> fvecs/ivecs conversion with dimension/count validation.
 *
 * Reads the published layout (`train`, `test`, `neighbors`), checks every
 * shape against the dataset spec, and writes base.fvecs / query.fvecs /
 * gt.ivecs. Output is staged under temporary names and renamed only after
 * everything validated, so a failed conversion leaves no partial files.
 * Float payloads are copied bit-exactly; large matrices stream in row
 * slices to keep the wasm heap small.
 */

import { mkdirSync, renameSync, rmSync } from "node:fs";
import { join } from "node:path";

import h5wasm from "h5wasm/node";

import type { DatasetSpec } from "./datasets.js";
import { VecsWriter } from "./formats.js";

const SLICE_ROWS = 50_000;

export interface ConvertResult {
  basePath: string;
  queryPath: string;
  gtPath: string;
  trainRows: number;
  testRows: number;
  dim: number;
}

interface H5Dataset {
  shape: number[];
  slice(ranges: Array<number[]>): Float32Array | Int32Array | unknown;
}

function requireDataset(file: InstanceType<typeof h5wasm.File>, name: string): H5Dataset {
  const node = file.get(name);
  if (!node || !("shape" in node)) {
    throw new Error(`dataset '${name}' missing from HDF5 file`);
  }
  return node as unknown as H5Dataset;
}

function checkShape(name: string, shape: number[], rows: number | null, cols: number | null): void {
  if (shape.length !== 2) {
    throw new Error(`${name}: expected a 2-d dataset, got shape [${shape}]`);
  }
  if (rows !== null && shape[0] !== rows) {
    throw new Error(`${name}: row count ${shape[0]} does not match expected ${rows}`);
  }
  if (cols !== null && shape[1] !== cols) {
    throw new Error(`${name}: dimension ${shape[1]} does not match expected ${cols}`);
  }
}

function streamToWriter(ds: H5Dataset, writer: VecsWriter,
                        cast: (block: unknown) => Float32Array | Int32Array): void {
  const [rows] = ds.shape;
  for (let start = 0; start < rows; start += SLICE_ROWS) {
    const stop = Math.min(start + SLICE_ROWS, rows);
    writer.append(cast(ds.slice([[start, stop], []])));
  }
}

export async function convertHdf5(h5Path: string, outDir: string,
                                  spec: DatasetSpec): Promise<ConvertResult> {
  await h5wasm.ready;
  mkdirSync(outDir, { recursive: true });
  const file = new h5wasm.File(h5Path, "r");
  const staged: Array<[string, string]> = [];
  try {
    const train = requireDataset(file, "train");
    const test = requireDataset(file, "test");
    const neighbors = requireDataset(file, "neighbors");
    checkShape("train", train.shape, spec.trainRows, spec.dim);
    checkShape("test", test.shape, spec.testRows, spec.dim);
    checkShape("neighbors", neighbors.shape, spec.testRows, null);

    const outputs: Array<[H5Dataset, string, (b: unknown) => Float32Array | Int32Array]> = [
      [train, "base.fvecs", (b) => toFloat32(b, "train")],
      [test, "query.fvecs", (b) => toFloat32(b, "test")],
      [neighbors, "gt.ivecs", (b) => toInt32(b, "neighbors")],
    ];
    for (const [ds, name, cast] of outputs) {
      const writer = new VecsWriter(ds.shape[1]);
      streamToWriter(ds, writer, cast);
      const tmp = join(outDir, name + ".part");
      writer.save(tmp);
      staged.push([tmp, join(outDir, name)]);
    }
  } catch (err) {
    for (const [tmp] of staged) {
      rmSync(tmp, { force: true });
    }
    file.close();
    throw err;
  }
  file.close();
  for (const [tmp, final] of staged) {
    renameSync(tmp, final);
  }
  return {
    basePath: join(outDir, "base.fvecs"),
    queryPath: join(outDir, "query.fvecs"),
    gtPath: join(outDir, "gt.ivecs"),
    trainRows: spec.trainRows,
    testRows: spec.testRows,
    dim: spec.dim,
  };
}

function toFloat32(block: unknown, name: string): Float32Array {
  if (block instanceof Float32Array) return block;
  if (block instanceof Float64Array) return Float32Array.from(block);
  throw new Error(`${name}: expected float payload, got ${block?.constructor?.name}`);
}

function toInt32(block: unknown, name: string): Int32Array {
  if (block instanceof Int32Array) return block;
  if (block instanceof BigInt64Array) return Int32Array.from(block, (v) => Number(v));
  if (block instanceof Uint32Array || block instanceof Int16Array
      || block instanceof Uint16Array) {
    return Int32Array.from(block as ArrayLike<number>);
  }
  throw new Error(`${name}: expected integer payload, got ${block?.constructor?.name}`);
}
