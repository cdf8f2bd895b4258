/**
 * Published ann-benchmarks datasets handled by the fetch/convert pipeline.
 *
 * Each HDF5 file carries `train` (base vectors), `test` (queries) and
 * `neighbors` (true neighbor ids per query). Expected dimensions and row
 * counts are pinned here and enforced during conversion.
 */

export interface DatasetSpec {
  name: string;
  url: string;
  dim: number;
  trainRows: number;
  testRows: number;
}

export const DATASET_SPECS: Record<string, DatasetSpec> = {
  "sift-128-euclidean": {
    name: "sift-128-euclidean",
    url: "http://ann-benchmarks.com/sift-128-euclidean.hdf5",
    dim: 128,
    trainRows: 1_000_000,
    testRows: 10_000,
  },
  "mnist-784-euclidean": {
    name: "mnist-784-euclidean",
    url: "http://ann-benchmarks.com/mnist-784-euclidean.hdf5",
    dim: 784,
    trainRows: 60_000,
    testRows: 10_000,
  },
  "fashion-mnist-784-euclidean": {
    name: "fashion-mnist-784-euclidean",
    url: "http://ann-benchmarks.com/fashion-mnist-784-euclidean.hdf5",
    dim: 784,
    trainRows: 60_000,
    testRows: 10_000,
  },
};

export function getSpec(name: string): DatasetSpec {
  const spec = DATASET_SPECS[name];
  if (!spec) {
    throw new Error(`unknown dataset ${name}; known: ${Object.keys(DATASET_SPECS).join(", ")}`);
  }
  return spec;
}
