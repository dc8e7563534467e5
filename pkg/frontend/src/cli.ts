/**
 * classifier-lab command line.
 *
 *   study          --features features.csv --out report.md [--json report.json] [--seed 0]
 *   plot-traces    --unshaped a.csv --shaped b.csv --out fig.svg
 *   plot-mix       --mix mix.json --key model/mode --out fig.svg
 *   plot-overhead  --overhead overhead.json --out fig.svg
 */

import { readFileSync, writeFileSync } from "node:fs";
import { loadFeatures } from "./dataset.js";
import { markdownTable, runStudy } from "./study.js";
import {
  mixBarsSvg,
  overheadBarsSvg,
  parseTraceCsv,
  traceComparisonSvg,
} from "./plot.js";

function argValue(args: string[], name: string, fallback?: string): string {
  const i = args.indexOf(`--${name}`);
  if (i >= 0 && i + 1 < args.length) return args[i + 1];
  if (fallback !== undefined) return fallback;
  throw new Error(`missing --${name}`);
}

export function main(argv: string[]): number {
  const [command, ...args] = argv;
  try {
    if (command === "study") {
      const ds = loadFeatures(argValue(args, "features"));
      const seed = Number(argValue(args, "seed", "0"));
      const table = runStudy(ds, seed);
      writeFileSync(argValue(args, "out"), markdownTable(table));
      const jsonOut = argValue(args, "json", "");
      if (jsonOut) {
        writeFileSync(jsonOut, JSON.stringify(table, null, 2) + "\n");
      }
      return 0;
    }
    if (command === "plot-traces") {
      const unshaped = parseTraceCsv(readFileSync(argValue(args, "unshaped"), "utf-8"));
      const shaped = parseTraceCsv(readFileSync(argValue(args, "shaped"), "utf-8"));
      writeFileSync(argValue(args, "out"), traceComparisonSvg(unshaped, shaped));
      return 0;
    }
    if (command === "plot-mix") {
      const all = JSON.parse(readFileSync(argValue(args, "mix"), "utf-8"));
      const key = argValue(args, "key", Object.keys(all).sort()[0]);
      writeFileSync(argValue(args, "out"), mixBarsSvg(all[key]));
      return 0;
    }
    if (command === "plot-overhead") {
      const raw = JSON.parse(readFileSync(argValue(args, "overhead"), "utf-8"));
      const flat: Record<string, Record<string, number>> = {};
      for (const [key, entry] of Object.entries<any>(raw)) {
        flat[key] = entry.overhead ?? entry;
      }
      writeFileSync(argValue(args, "out"), overheadBarsSvg(flat));
      return 0;
    }
    console.error(`unknown command: ${command ?? "(none)"}`);
    return 2;
  } catch (err) {
    console.error(String(err));
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
