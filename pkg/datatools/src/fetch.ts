/**
 * Download a published benchmark HDF5 (or take a local copy) and convert it.
 *
 * Downloads stream to a `.download` temp name and move into place only when
 * complete, so an interrupted transfer leaves no plausible-looking file.
 */

import { createWriteStream, existsSync, renameSync, rmSync } from "node:fs";
import { mkdirSync } from "node:fs";
import { join } from "node:path";
import { Readable } from "node:stream";
import { pipeline } from "node:stream/promises";

import { convertHdf5, ConvertResult } from "./convert.js";
import type { DatasetSpec } from "./datasets.js";

export async function downloadToFile(url: string, dest: string): Promise<void> {
  const tmp = dest + ".download";
  const res = await fetch(url);
  if (!res.ok || !res.body) {
    throw new Error(`download failed: ${res.status} ${res.statusText} for ${url}`);
  }
  try {
    await pipeline(Readable.fromWeb(res.body as never), createWriteStream(tmp));
    const declared = res.headers.get("content-length");
    if (declared !== null) {
      const { size } = await import("node:fs").then((fs) => fs.statSync(tmp));
      if (size !== Number(declared)) {
        throw new Error(`truncated download: got ${size} of ${declared} bytes`);
      }
    }
  } catch (err) {
    rmSync(tmp, { force: true });
    throw err;
  }
  renameSync(tmp, dest);
}

export interface FetchOptions {
  /** use this local HDF5 instead of downloading */
  localFile?: string;
  /** keep the downloaded HDF5 next to the converted outputs */
  keepHdf5?: boolean;
}

export async function fetchConvert(spec: DatasetSpec, outDir: string,
                                   opts: FetchOptions = {}): Promise<ConvertResult> {
  mkdirSync(outDir, { recursive: true });
  let h5Path = opts.localFile;
  let downloaded = false;
  if (!h5Path) {
    h5Path = join(outDir, `${spec.name}.hdf5`);
    if (!existsSync(h5Path)) {
      await downloadToFile(spec.url, h5Path);
      downloaded = true;
    }
  }
  try {
    return await convertHdf5(h5Path, outDir, spec);
  } finally {
    if (downloaded && !opts.keepHdf5) {
      rmSync(h5Path, { force: true });
    }
  }
}
