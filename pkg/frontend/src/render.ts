/**
 * The three figure kinds: per-class utility curve fans, margin-sweep heat
 * grids, and accuracy-vs-inconsistency pareto scatters.
 */

import { basename } from "node:path";

import {
  CurvePoint,
  HistoryRow,
  SchemaError,
  SweepRow,
} from "./schemas.js";
import { Svg, drawAxes, fmtTick, frame, seriesColor, xPix, yPix } from "./svg.js";

const WIDTH = 820;
const HEIGHT = 520;

export function renderCurves(points: CurvePoint[]): string {
  const byClass = new Map<string, CurvePoint[]>();
  for (const p of points) {
    const list = byClass.get(p.classId) ?? [];
    list.push(p);
    byClass.set(p.classId, list);
  }
  const ds = points.map((p) => p.d);
  const f = frame(WIDTH, HEIGHT, [Math.min(...ds), Math.max(...ds)], [0, 1]);
  const svg = new Svg(WIDTH, HEIGHT);
  const classIds = [...byClass.keys()].filter((c) => c !== "pooled");
  drawAxes(
    svg,
    f,
    `Per-class utility across the calibration range (${classIds.length} classes)`,
    "distance threshold",
    "utility",
  );
  classIds.forEach((classId, i) => {
    const pts = byClass.get(classId)!;
    svg.polyline(
      pts.map((p) => [xPix(f, p.d), yPix(f, p.utility)]),
      seriesColor(i, classIds.length),
      1.2,
    );
  });
  const pooled = byClass.get("pooled");
  if (pooled) {
    svg.polyline(
      pooled.map((p) => [xPix(f, p.d), yPix(f, p.utility)]),
      "#000",
      2.5,
      "6 3",
    );
    svg.line(f.right - 150, f.top + 10, f.right - 120, f.top + 10, "#000", 2.5, "6 3");
    svg.text(f.right - 114, f.top + 14, "pooled", { size: 11 });
  }
  return svg.toString();
}

export function renderSweep(rows: SweepRow[]): string {
  const baseline = rows.find((row) => row.label === "baseline");
  const cells = rows.filter((row) => row.mPlus !== null && row.mMinus !== null);
  if (cells.length === 0) {
    throw new SchemaError("sweep has no margin rows to draw");
  }
  const mPlusValues = [...new Set(cells.map((c) => c.mPlus!))].sort((a, b) => a - b);
  const mMinusValues = [...new Set(cells.map((c) => c.mMinus!))].sort((a, b) => a - b);
  const f = frame(WIDTH, HEIGHT, [0, 1], [0, 1]);
  const svg = new Svg(WIDTH, HEIGHT);
  const title = baseline
    ? `Margin sweep: OPIS per (m+, m-); baseline ${fmtTick(baseline.opis)}`
    : "Margin sweep: OPIS per (m+, m-)";
  svg.text((f.left + f.right) / 2, 24, title, { size: 15, anchor: "middle", bold: true });

  const cellW = (f.right - f.left) / mMinusValues.length;
  const cellH = (f.bottom - f.top) / mPlusValues.length;
  const opisValues = cells.map((c) => c.opis);
  const lo = Math.min(...opisValues);
  const hi = Math.max(...opisValues, baseline ? baseline.opis : -Infinity);

  for (const cell of cells) {
    const col = mMinusValues.indexOf(cell.mMinus!);
    const row = mPlusValues.indexOf(cell.mPlus!);
    const x = f.left + col * cellW;
    const y = f.bottom - (row + 1) * cellH;
    // light for low inconsistency, saturated red as it approaches the max
    const t = hi > lo ? (cell.opis - lo) / (hi - lo) : 0;
    const shade = Math.round(245 - t * 160);
    svg.rect(x, y, cellW, cellH, `rgb(255, ${shade}, ${shade})`, "#777");
    svg.text(x + cellW / 2, y + cellH / 2 - 6, fmtTick(cell.opis), {
      size: 13,
      anchor: "middle",
      bold: true,
    });
    svg.text(x + cellW / 2, y + cellH / 2 + 12, `recall@1 ${fmtTick(cell.recall1)}`, {
      size: 10,
      anchor: "middle",
      fill: "#555",
    });
  }
  mMinusValues.forEach((m, col) => {
    svg.text(f.left + (col + 0.5) * cellW, f.bottom + 18, fmtTick(m), {
      size: 11,
      anchor: "middle",
    });
  });
  mPlusValues.forEach((m, row) => {
    svg.text(f.left - 8, f.bottom - (row + 0.5) * cellH + 4, fmtTick(m), {
      size: 11,
      anchor: "end",
    });
  });
  svg.text((f.left + f.right) / 2, HEIGHT - 14, "negative margin m-", {
    size: 12,
    anchor: "middle",
  });
  svg.text(18, (f.top + f.bottom) / 2, "positive margin m+", {
    size: 12,
    anchor: "middle",
    rotate: -90,
  });
  if (baseline) {
    svg.text(f.left, f.bottom + 38, `baseline (regularizer off): OPIS ${fmtTick(baseline.opis)}, recall@1 ${fmtTick(baseline.recall1)}`, {
      size: 11,
      fill: "#333",
    });
  }
  return svg.toString();
}

export interface HistorySeries {
  path: string;
  rows: HistoryRow[];
}

export function renderPareto(series: HistorySeries[]): string {
  const usable = series.map((s) => ({
    label: basename(s.path).replace(/\.csv$/, ""),
    rows: s.rows.filter((r) => Number.isFinite(r.recall1) && Number.isFinite(r.opis)),
  }));
  if (usable.every((s) => s.rows.length === 0)) {
    throw new SchemaError("no history rows with finite recall1/opis to draw");
  }
  const all = usable.flatMap((s) => s.rows);
  const rLo = Math.min(...all.map((r) => r.recall1));
  const rHi = Math.max(...all.map((r) => r.recall1));
  const oHi = Math.max(...all.map((r) => r.opis));
  const pad = (rHi - rLo || 0.05) * 0.08;
  const f = frame(WIDTH, HEIGHT, [rLo - pad, rHi + pad], [0, oHi * 1.08]);
  const svg = new Svg(WIDTH, HEIGHT);
  drawAxes(
    svg,
    f,
    "Accuracy vs calibration inconsistency (per evaluated epoch)",
    "recall@1",
    "OPIS",
  );
  usable.forEach((s, i) => {
    const color = seriesColor(i, usable.length);
    const pts = s.rows.map(
      (row) => [xPix(f, row.recall1), yPix(f, row.opis)] as [number, number],
    );
    svg.polyline(pts, color, 1, "2 3");
    pts.forEach(([x, y], k) => svg.circle(x, y, k === pts.length - 1 ? 5 : 3, color));
    const legendY = f.top + 14 + i * 16;
    svg.circle(f.left + 12, legendY - 4, 4, color);
    svg.text(f.left + 22, legendY, s.label, { size: 11 });
  });
  return svg.toString();
}
