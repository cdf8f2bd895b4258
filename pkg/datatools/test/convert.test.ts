import { existsSync, mkdtempSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import h5wasm from "h5wasm/node";
import { beforeAll, describe, expect, it } from "vitest";

import { convertHdf5 } from "../src/convert.js";
import { DATASET_SPECS, DatasetSpec, getSpec } from "../src/datasets.js";
import { fetchConvert } from "../src/fetch.js";
import { readFvecs, readIvecs } from "../src/formats.js";

const TRAIN_ROWS = 120;
const TEST_ROWS = 15;
const DIM = 9;

const tinySpec: DatasetSpec = {
  name: "tiny-9-euclidean",
  url: "file:///nonexistent",
  dim: DIM,
  trainRows: TRAIN_ROWS,
  testRows: TEST_ROWS,
};

let h5Path: string;
let train: Float32Array;
let test: Float32Array;
let neighbors: Int32Array;

beforeAll(async () => {
  await h5wasm.ready;
  const dir = mkdtempSync(join(tmpdir(), "convert-"));
  h5Path = join(dir, "tiny.hdf5");
  // deterministic payloads with awkward float values
  train = new Float32Array(TRAIN_ROWS * DIM);
  for (let i = 0; i < train.length; i++) train[i] = Math.fround(Math.sin(i) * 17.3);
  test = new Float32Array(TEST_ROWS * DIM);
  for (let i = 0; i < test.length; i++) test[i] = Math.fround(Math.cos(i) / 3);
  neighbors = Int32Array.from({ length: TEST_ROWS * 10 }, (_, i) => (i * 13) % TRAIN_ROWS);
  const f = new h5wasm.File(h5Path, "w");
  f.create_dataset({ name: "train", data: train, shape: [TRAIN_ROWS, DIM], dtype: "<f4" });
  f.create_dataset({ name: "test", data: test, shape: [TEST_ROWS, DIM], dtype: "<f4" });
  f.create_dataset({ name: "neighbors", data: neighbors, shape: [TEST_ROWS, 10], dtype: "<i4" });
  f.close();
});

describe("dataset specs", () => {
  it("pins the published dimensions and sizes", () => {
    expect(DATASET_SPECS["sift-128-euclidean"].dim).toBe(128);
    expect(DATASET_SPECS["sift-128-euclidean"].trainRows).toBe(1_000_000);
    expect(DATASET_SPECS["mnist-784-euclidean"].dim).toBe(784);
    // MNIST / Fashion-MNIST total 70K = 60K train + 10K queries
    for (const name of ["mnist-784-euclidean", "fashion-mnist-784-euclidean"]) {
      const spec = DATASET_SPECS[name];
      expect(spec.dim).toBe(784);
      expect(spec.trainRows + spec.testRows).toBe(70_000);
    }
  });

  it("rejects unknown names", () => {
    expect(() => getSpec("bogus")).toThrow(/unknown dataset/);
  });
});

describe("convertHdf5", () => {
  it("writes the three outputs with payloads equal to the source", async () => {
    const outDir = mkdtempSync(join(tmpdir(), "out-"));
    const result = await convertHdf5(h5Path, outDir, tinySpec);

    const base = readFvecs(result.basePath);
    expect(base.rows).toBe(TRAIN_ROWS);
    expect(base.dim).toBe(DIM);
    // bit-exact float comparison via the raw bytes
    expect(Buffer.from(base.data.buffer, base.data.byteOffset, base.data.byteLength))
      .toEqual(Buffer.from(train.buffer));

    const query = readFvecs(result.queryPath);
    expect(query.rows).toBe(TEST_ROWS);
    expect(Buffer.from(query.data.buffer, query.data.byteOffset, query.data.byteLength))
      .toEqual(Buffer.from(test.buffer));

    const gt = readIvecs(result.gtPath);
    expect(gt.rows).toBe(TEST_ROWS);
    expect(gt.dim).toBe(10);
    expect(Array.from(gt.data)).toEqual(Array.from(neighbors));
  });

  it("aborts on dimension mismatch and leaves no partial outputs", async () => {
    const outDir = mkdtempSync(join(tmpdir(), "dimfail-"));
    const wrong = { ...tinySpec, dim: DIM + 1 };
    await expect(convertHdf5(h5Path, outDir, wrong)).rejects.toThrow(/dimension/);
    expect(readdirSync(outDir)).toEqual([]);
  });

  it("aborts on row-count mismatch", async () => {
    const outDir = mkdtempSync(join(tmpdir(), "cntfail-"));
    const wrong = { ...tinySpec, trainRows: TRAIN_ROWS + 5 };
    await expect(convertHdf5(h5Path, outDir, wrong)).rejects.toThrow(/row count/);
    expect(readdirSync(outDir)).toEqual([]);
  });
});

describe("fetchConvert", () => {
  it("accepts a local file in place of a download", async () => {
    const outDir = mkdtempSync(join(tmpdir(), "local-"));
    const result = await fetchConvert(tinySpec, outDir, { localFile: h5Path });
    expect(existsSync(result.basePath)).toBe(true);
    expect(existsSync(result.gtPath)).toBe(true);
  });

  it("fails loudly when the download target is unreachable", async () => {
    const outDir = mkdtempSync(join(tmpdir(), "dl-"));
    const spec = { ...tinySpec, url: "http://127.0.0.1:1/never.hdf5" };
    await expect(fetchConvert(spec, outDir)).rejects.toThrow();
    // no partial outputs
    expect(readdirSync(outDir).filter((f) => !f.endsWith(".download"))).toEqual([]);
  }, 20_000);
});
