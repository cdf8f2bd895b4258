/**
 * Reader for the index CLI's eval reports: '# key=value' metadata comment
 * lines followed by a CSV table, one row per query budget.
 */

import { readFileSync } from "node:fs";

import Papa from "papaparse";

export interface EvalRow {
  label: string;
  bucket_mode: string;
  topk_k: number | null;
  probe_ratio: number;
  max_candidates: number | null;
  recall_at_1: number;
  recall_10_at_10: number;
  mean_candidates: number;
  mean_bins_probed: number;
  mean_buckets_probed: number;
  wall_time_s: number;
  n_queries: number;
}

export interface EvalReport {
  metadata: Record<string, string>;
  rows: EvalRow[];
  path: string;
}

const NUMERIC: Array<keyof EvalRow> = [
  "probe_ratio", "recall_at_1", "recall_10_at_10", "mean_candidates",
  "mean_bins_probed", "mean_buckets_probed", "wall_time_s", "n_queries",
];

export function readEvalCsv(path: string): EvalReport {
  const text = readFileSync(path, "utf-8");
  const metadata: Record<string, string> = {};
  const dataLines: string[] = [];
  for (const line of text.split(/\r?\n/)) {
    if (line.startsWith("#")) {
      const body = line.slice(1).trim();
      const eq = body.indexOf("=");
      if (eq > 0) {
        metadata[body.slice(0, eq).trim()] = body.slice(eq + 1);
      }
    } else if (line.trim() !== "") {
      dataLines.push(line);
    }
  }
  const parsed = Papa.parse<Record<string, string>>(dataLines.join("\n"), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new Error(`${path}: ${parsed.errors[0].message} (row ${parsed.errors[0].row})`);
  }
  const rows: EvalRow[] = parsed.data.map((rec) => {
    const row: Record<string, unknown> = { ...rec };
    for (const key of NUMERIC) {
      const raw = rec[key];
      if (raw === undefined || raw === "") {
        throw new Error(`${path}: missing numeric column '${key}'`);
      }
      const val = Number(raw);
      if (!Number.isFinite(val)) {
        throw new Error(`${path}: non-numeric value '${raw}' in column '${key}'`);
      }
      row[key] = val;
    }
    row.topk_k = rec.topk_k === "" ? null : Number(rec.topk_k);
    row.max_candidates = rec.max_candidates === "" ? null : Number(rec.max_candidates);
    return row as unknown as EvalRow;
  });
  return { metadata, rows, path };
}
