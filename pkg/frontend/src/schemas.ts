/**
 * Parsers for the primary CLI's documented output schemas.
 *
 * These renderers never recompute metrics: values pass straight from the
 * CSV cells into plot coordinates.  Any header or version drift is a hard
 * error so a figure can never silently misrepresent a differently-shaped
 * file.
 */

import { readFileSync } from "node:fs";

export const CURVES_HEADER = "class_id,d,utility";
export const HISTORY_HEADER =
  "epoch,loss,recall1,opis,pos_selected,neg_selected,m_plus_mean,m_plus_min,m_plus_max";
export const SWEEP_HEADER = "label,m_plus,m_minus,recall1,opis";
export const SUPPORTED_SCHEMA_VERSION = 1;

export class SchemaError extends Error {}

export interface CurvePoint {
  classId: string;
  d: number;
  utility: number;
}

export interface HistoryRow {
  epoch: number;
  loss: number;
  recall1: number;
  opis: number;
}

export interface SweepRow {
  label: string;
  mPlus: number | null;
  mMinus: number | null;
  recall1: number;
  opis: number;
}

function readRows(path: string, expectedHeader: string): string[][] {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new SchemaError(`${path}: ${(err as Error).message}`);
  }
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new SchemaError(`${path}: empty file`);
  }
  if (lines[0] !== expectedHeader) {
    throw new SchemaError(
      `${path}: header mismatch\n  expected: ${expectedHeader}\n  found:    ${lines[0]}`,
    );
  }
  const width = expectedHeader.split(",").length;
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== width) {
      throw new SchemaError(`${path}: row ${i + 2} has ${cells.length} fields, expected ${width}`);
    }
    return cells;
  });
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
  return rows;
}

function num(path: string, cell: string, where: string): number {
  const value = Number(cell);
  if (cell.trim() === "" || Number.isNaN(value)) {
    throw new SchemaError(`${path}: ${where}: not a number: ${JSON.stringify(cell)}`);
  }
  return value;
}

export function readCurves(path: string): CurvePoint[] {
  return readRows(path, CURVES_HEADER).map((cells, i) => ({
    classId: cells[0],
    d: num(path, cells[1], `row ${i + 2} d`),
    utility: num(path, cells[2], `row ${i + 2} utility`),
  }));
}

export function readHistory(path: string): HistoryRow[] {
  return readRows(path, HISTORY_HEADER).map((cells, i) => ({
    epoch: num(path, cells[0], `row ${i + 2} epoch`),
    loss: Number(cells[1]),
    recall1: Number(cells[2]),
    opis: Number(cells[3]),
  }));
}

export function readSweep(path: string): SweepRow[] {
  return readRows(path, SWEEP_HEADER).map((cells, i) => ({
    label: cells[0],
    mPlus: cells[1] === "" ? null : num(path, cells[1], `row ${i + 2} m_plus`),
    mMinus: cells[2] === "" ? null : num(path, cells[2], `row ${i + 2} m_minus`),
    recall1: num(path, cells[3], `row ${i + 2} recall1`),
    opis: num(path, cells[4], `row ${i + 2} opis`),
  }));
}

/** Validate a report JSON's schema_version (used when a report feeds a figure). */
export function checkReportVersion(path: string): void {
  let doc: unknown;
  try {
    doc = JSON.parse(readFileSync(path, "utf8"));
  } catch (err) {
    throw new SchemaError(`${path}: ${(err as Error).message}`);
  }
  const version = (doc as { schema_version?: unknown }).schema_version;
  if (version !== SUPPORTED_SCHEMA_VERSION) {
    throw new SchemaError(
      `${path}: schema_version ${String(version)} unsupported (want ${SUPPORTED_SCHEMA_VERSION})`,
    );
  }
}
