#!/usr/bin/env node
/**
 * plot --kind curves|sweep|pareto --in FILE [--in FILE ...] --out FIG.svg
 *
 * Renders the training/evaluation CSV outputs into SVG figures.  Exits 2
 * with a message (and writes nothing) when an input does not match its
 * documented schema.
 */

import { writeFileSync } from "node:fs";

import { readCurves, readHistory, readSweep, SchemaError } from "./schemas.js";
import { renderCurves, renderPareto, renderSweep } from "./render.js";

interface Args {
  kind: string;
  inputs: string[];
  out: string;
}

function parseArgs(argv: string[]): Args {
  let kind = "";
  let out = "";
  const inputs: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new SchemaError(`${arg} expects a value`);
      return argv[i];
    };
    if (arg === "--kind") kind = next();
    else if (arg === "--in") inputs.push(next());
    else if (arg === "--out") out = next();
    else if (arg === "--help" || arg === "-h") {
      console.log("usage: plot --kind curves|sweep|pareto --in FILE [--in FILE ...] --out FIG.svg");
      process.exit(0);
    } else throw new SchemaError(`unknown argument: ${arg}`);
  }
  if (!kind || !out || inputs.length === 0) {
    throw new SchemaError("required: --kind, --in, --out");
  }
  return { kind, inputs, out };
}

function render(args: Args): string {
  switch (args.kind) {
    case "curves":
      if (args.inputs.length !== 1) throw new SchemaError("curves takes exactly one --in");
      return renderCurves(readCurves(args.inputs[0]));
    case "sweep":
      if (args.inputs.length !== 1) throw new SchemaError("sweep takes exactly one --in");
      return renderSweep(readSweep(args.inputs[0]));
    case "pareto":
      return renderPareto(
        args.inputs.map((path) => ({ path, rows: readHistory(path) })),
      );
    default:
      throw new SchemaError(`unknown --kind ${args.kind} (want curves, sweep or pareto)`);
  }
}

function main(): number {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
    const svg = render(args);
    writeFileSync(args.out, svg);
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`plot: ${err.message}`);
      return 2;
    }
    console.error(`plot: ${(err as Error).message}`);
    return 1;
  }
  console.log(args.out);
  return 0;
}

process.exit(main());
