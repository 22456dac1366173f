import { execFileSync } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  SchemaError,
  checkReportVersion,
  readCurves,
  readHistory,
  readSweep,
} from "../dist/schemas.js";
import { renderCurves, renderPareto, renderSweep } from "../dist/render.js";

const ROOT = join(__dirname, "..");
const DATA = join(ROOT, "testdata");
const ENTRY = join(ROOT, "dist", "plot.js");

function runPlot(args: string[]): { code: number; stderr: string } {
  try {
    execFileSync("node", [ENTRY, ...args], { encoding: "utf8" });
    return { code: 0, stderr: "" };
  } catch (err) {
    const e = err as { status?: number; stderr?: string };
    return { code: e.status ?? -1, stderr: e.stderr ?? "" };
  }
}

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "calm-plots-"));
}

describe("schema parsing", () => {
  it("reads the shipped curve samples", () => {
    const points = readCurves(join(DATA, "curves.csv"));
    expect(points.length).toBeGreaterThan(100);
    const classes = new Set(points.map((p) => p.classId));
    expect(classes.has("pooled")).toBe(true);
    for (const p of points) {
      expect(p.utility).toBeGreaterThanOrEqual(0);
      expect(p.utility).toBeLessThanOrEqual(1);
    }
  });

  it("reads history and sweep samples", () => {
    const history = readHistory(join(DATA, "history_base.csv"));
    expect(history[0].epoch).toBe(1);
    const sweep = readSweep(join(DATA, "sweep.csv"));
    expect(sweep[0].label).toBe("baseline");
    expect(sweep[0].mPlus).toBeNull();
    expect(sweep.filter((r) => r.label === "cam")).toHaveLength(9);
  });

  it("rejects a wrong header", () => {
    expect(() => readCurves(join(DATA, "bad_header.csv"))).toThrow(SchemaError);
  });

  it("rejects an empty data section", () => {
    const dir = tmp();
    const path = join(dir, "empty.csv");
    writeFileSync(path, "class_id,d,utility\n");
    expect(() => readCurves(path)).toThrow(/no data rows/);
  });

  it("rejects an unsupported report version", () => {
    const dir = tmp();
    const path = join(dir, "report.json");
    writeFileSync(path, JSON.stringify({ schema_version: 99 }));
    expect(() => checkReportVersion(path)).toThrow(/schema_version 99/);
  });
});

describe("renderers", () => {
  it("draws one curve per class plus the pooled reference", () => {
    const svg = renderCurves(readCurves(join(DATA, "curves.csv")));
    const fans = (svg.match(/<polyline /g) ?? []).length;
    expect(fans).toBe(9); // 8 classes + pooled
    expect(svg).toContain("pooled");
  });

  it("draws a full heat grid with the baseline annotation", () => {
    const svg = renderSweep(readSweep(join(DATA, "sweep.csv")));
    const cells = (svg.match(/<rect /g) ?? []).length;
    expect(cells).toBe(10); // background + 9 cells
    expect(svg).toContain("baseline");
  });

  it("draws labeled point series per history file", () => {
    const svg = renderPareto([
      { path: "history_base.csv", rows: readHistory(join(DATA, "history_base.csv")) },
      { path: "history_cam.csv", rows: readHistory(join(DATA, "history_cam.csv")) },
    ]);
    expect(svg).toContain("history_base");
    expect(svg).toContain("history_cam");
    expect((svg.match(/<polyline /g) ?? []).length).toBe(2);
  });
});

describe("command line", () => {
  it("renders all three kinds", () => {
    const dir = tmp();
    for (const [kind, inputs] of [
      ["curves", [join(DATA, "curves.csv")]],
      ["sweep", [join(DATA, "sweep.csv")]],
      ["pareto", [join(DATA, "history_base.csv"), join(DATA, "history_cam.csv")]],
    ] as Array<[string, string[]]>) {
      const out = join(dir, `${kind}.svg`);
      const args = ["--kind", kind, ...inputs.flatMap((p) => ["--in", p]), "--out", out];
      expect(runPlot(args).code).toBe(0);
      expect(readFileSync(out, "utf8")).toContain("<svg");
    }
  });

  it("fails cleanly on a schema mismatch and writes nothing", () => {
    const dir = tmp();
    const out = join(dir, "bad.svg");
    const result = runPlot([
      "--kind", "curves", "--in", join(DATA, "bad_header.csv"), "--out", out,
    ]);
    expect(result.code).toBe(2);
    expect(result.stderr).toContain("header mismatch");
    expect(existsSync(out)).toBe(false);
  });

  it("fails on an empty sweep without writing", () => {
    const dir = tmp();
    const empty = join(dir, "empty_sweep.csv");
    writeFileSync(empty, "label,m_plus,m_minus,recall1,opis\n");
    const out = join(dir, "sweep.svg");
    const result = runPlot(["--kind", "sweep", "--in", empty, "--out", out]);
    expect(result.code).toBe(2);
    expect(existsSync(out)).toBe(false);
  });

  it("rejects unknown kinds and missing flags", () => {
    expect(runPlot(["--kind", "donut", "--in", "x", "--out", "y"]).code).toBe(2);
    expect(runPlot(["--kind", "curves"]).code).toBe(2);
  });
});
