/**
 * Recall-versus-candidates figures from eval reports, rendered as SVG
 * (PNG via sharp when the output name asks for it).
 *
 * The renderer is deliberately transparent: it returns the exact series it
 * plotted plus the axis transforms, and every marker carries its data
 * coordinates, so tests can verify the figure against the CSV numbers.
 */

import { writeFileSync } from "node:fs";

import type { EvalReport } from "./evalcsv.js";

export type Metric = "recall_at_1" | "recall_10_at_10";

export interface PlotOptions {
  metric?: Metric;
  logx?: boolean;
  width?: number;
  height?: number;
  title?: string;
}

export interface Series {
  label: string;
  x: number[];
  y: number[];
}

export interface AxisTransform {
  log: boolean;
  domain: [number, number];
  range: [number, number];
}

export interface RenderedPlot {
  svg: string;
  series: Series[];
  xAxis: AxisTransform;
  yAxis: AxisTransform;
}

const COLORS = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
const MARGIN = { top: 36, right: 18, bottom: 46, left: 56 };

function scale(t: AxisTransform, v: number): number {
  const [d0, d1] = t.log ? [Math.log10(t.domain[0]), Math.log10(t.domain[1])] : t.domain;
  const value = t.log ? Math.log10(v) : v;
  const frac = d1 === d0 ? 0.5 : (value - d0) / (d1 - d0);
  return t.range[0] + frac * (t.range[1] - t.range[0]);
}

export function unscale(t: AxisTransform, pixel: number): number {
  const [d0, d1] = t.log ? [Math.log10(t.domain[0]), Math.log10(t.domain[1])] : t.domain;
  const frac = (pixel - t.range[0]) / (t.range[1] - t.range[0]);
  const value = d0 + frac * (d1 - d0);
  return t.log ? 10 ** value : value;
}

function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (hi <= lo) return [lo];
  const step = (hi - lo) / n;
  const mag = 10 ** Math.floor(Math.log10(step));
  const nice = [1, 2, 5, 10].map((m) => m * mag).find((s) => (hi - lo) / s <= n) ?? mag * 10;
  const start = Math.ceil(lo / nice) * nice;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += nice) ticks.push(Number(v.toPrecision(10)));
  return ticks;
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderRecallCurves(reports: EvalReport[],
                                   options: PlotOptions = {}): RenderedPlot {
  if (reports.length === 0) {
    throw new Error("no reports to plot");
  }
  const metric = options.metric ?? "recall_10_at_10";
  const width = options.width ?? 640;
  const height = options.height ?? 420;

  const series: Series[] = reports.map((report) => {
    const rows = [...report.rows].sort((a, b) => a.mean_candidates - b.mean_candidates);
    return {
      label: report.metadata.label ?? report.path,
      x: rows.map((r) => r.mean_candidates),
      y: rows.map((r) => r[metric]),
    };
  });

  const allX = series.flatMap((s) => s.x);
  let xLo = Math.min(...allX);
  let xHi = Math.max(...allX);
  if (options.logx) {
    xLo = Math.max(xLo, 1e-9);
    if (xHi <= xLo) xHi = xLo * 10;
  } else if (xHi === xLo) {
    xHi = xLo + 1;
  }
  const xAxis: AxisTransform = {
    log: Boolean(options.logx),
    domain: [xLo, xHi],
    range: [MARGIN.left, width - MARGIN.right],
  };
  const yAxis: AxisTransform = {
    log: false,
    domain: [0, 1],
    range: [height - MARGIN.bottom, MARGIN.top],
  };

  const parts: string[] = [];
  parts.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" `
    + `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="11">`);
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  if (options.title) {
    parts.push(`<text x="${width / 2}" y="18" text-anchor="middle" font-size="13">`
      + `${esc(options.title)}</text>`);
  }

  // frame and grid
  const x0 = MARGIN.left, x1 = width - MARGIN.right;
  const y0 = height - MARGIN.bottom, y1 = MARGIN.top;
  parts.push(`<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" `
    + `fill="none" stroke="#999"/>`);
  for (const tick of [0, 0.2, 0.4, 0.6, 0.8, 1.0]) {
    const py = scale(yAxis, tick);
    parts.push(`<line x1="${x0}" y1="${py}" x2="${x1}" y2="${py}" stroke="#e0e0e0"/>`);
    parts.push(`<text x="${x0 - 6}" y="${py + 3.5}" text-anchor="end">${tick.toFixed(1)}</text>`);
  }
  const xTicks = options.logx
    ? logTicks(xAxis.domain[0], xAxis.domain[1])
    : niceTicks(xAxis.domain[0], xAxis.domain[1]);
  for (const tick of xTicks) {
    const px = scale(xAxis, tick);
    parts.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 4}" stroke="#999"/>`);
    parts.push(`<text x="${px}" y="${y0 + 16}" text-anchor="middle">${formatTick(tick)}</text>`);
  }
  parts.push(`<text x="${(x0 + x1) / 2}" y="${height - 8}" text-anchor="middle">`
    + `mean candidates examined</text>`);
  parts.push(`<text transform="translate(14 ${(y0 + y1) / 2}) rotate(-90)" `
    + `text-anchor="middle">${metric === "recall_at_1" ? "Recall@1" : "Recall10@10"}</text>`);

  series.forEach((s, i) => {
    const color = COLORS[i % COLORS.length];
    const pts = s.x.map((x, j) => `${scale(xAxis, x)},${scale(yAxis, s.y[j])}`);
    if (pts.length > 1) {
      parts.push(`<polyline points="${pts.join(" ")}" fill="none" stroke="${color}" `
        + `stroke-width="1.6"/>`);
    }
    s.x.forEach((x, j) => {
      parts.push(`<circle cx="${scale(xAxis, x)}" cy="${scale(yAxis, s.y[j])}" r="3.2" `
        + `fill="${color}" data-series="${esc(s.label)}" data-x="${x}" data-y="${s.y[j]}"/>`);
    });
    const ly = MARGIN.top + 14 + i * 15;
    parts.push(`<line x1="${x1 - 130}" y1="${ly - 4}" x2="${x1 - 110}" y2="${ly - 4}" `
      + `stroke="${color}" stroke-width="2"/>`);
    parts.push(`<text x="${x1 - 104}" y="${ly}">${esc(s.label)}</text>`);
  });
  parts.push("</svg>");

  return { svg: parts.join("\n"), series, xAxis, yAxis };
}

function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let p = Math.floor(Math.log10(lo)); p <= Math.ceil(Math.log10(hi)); p++) {
    const v = 10 ** p;
    if (v >= lo * 0.999 && v <= hi * 1.001) ticks.push(v);
  }
  return ticks.length ? ticks : [lo, hi];
}

function formatTick(v: number): string {
  if (v >= 10_000) return `${v / 1000}k`;
  return Number.isInteger(v) ? String(v) : String(Number(v.toPrecision(3)));
}

export async function writePlot(rendered: RenderedPlot, outPath: string): Promise<void> {
  if (outPath.toLowerCase().endsWith(".png")) {
    const { default: sharp } = await import("sharp");
    await sharp(Buffer.from(rendered.svg)).png().toFile(outPath);
    return;
  }
  writeFileSync(outPath, rendered.svg);
}
