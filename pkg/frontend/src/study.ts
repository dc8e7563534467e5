/**
 * The layer-type classification study: cross-validated accuracy of SVM and
 * MLP classifiers (with and without frequency-domain features) against the
 * execution-time-only baseline, per model and overall.
 */

import {
  Dataset,
  DegenerateDataset,
  FeatureRow,
  Standardizer,
  featureView,
  filterRows,
  fitStandardizer,
  splitDataset,
  standardize,
} from "./dataset.js";
import { makeClassifier } from "./classifiers.js";

export type ClassifierKind = "svm" | "mlp" | "timing";

export interface StudyResult {
  classifier: ClassifierKind;
  useDwt: boolean;
  shaped: boolean;
  perModel: Record<string, number>;
  overall: number;
  testRows: number;
}

function accuracy(hits: number, total: number): number {
  return total === 0 ? 0 : hits / total;
}

export function trainEval(
  ds: Dataset,
  classifier: ClassifierKind,
  useDwt: boolean,
  splitSeed: number,
  shaped = false,
): StudyResult {
  const slice = filterRows(ds, (r) => r.shaped === shaped);
  if (slice.rows.length < 8 || slice.labels.length < 2) {
    throw new DegenerateDataset(
      `need a non-degenerate ${shaped ? "shaped" : "unshaped"} corpus`,
    );
  }
  const view = classifier === "timing" ? "duration" : useDwt ? "all" : "stats";
  const { train, test } = splitDataset(slice, splitSeed);
  const labels = slice.labels;
  const encode = (r: FeatureRow) => labels.indexOf(r.label);

  const rawTrain = train.map((r) => featureView(r, view));
  const scaler: Standardizer = fitStandardizer(rawTrain);
  const xTrain = rawTrain.map((v) => standardize(v, scaler));
  const yTrain = train.map(encode);

  const model = makeClassifier(classifier);
  model.fit(xTrain, yTrain, labels.length, splitSeed);

  let hits = 0;
  const perModelHits: Record<string, [number, number]> = {};
  for (const row of test) {
    const predicted = model.predict(standardize(featureView(row, view), scaler));
    const hit = predicted === encode(row) ? 1 : 0;
    hits += hit;
    const entry = (perModelHits[row.model] ??= [0, 0]);
    entry[0] += hit;
    entry[1] += 1;
  }
  const perModel: Record<string, number> = {};
  for (const [name, [h, n]] of Object.entries(perModelHits).sort()) {
    perModel[name] = accuracy(h, n);
  }
  return {
    classifier,
    useDwt,
    shaped,
    perModel,
    overall: accuracy(hits, test.length),
    testRows: test.length,
  };
}

export interface StudyTable {
  splitSeed: number;
  rows: StudyResult[];
}

/** The full study grid: baseline plus SVM/MLP with and without wavelets,
 * over both the unshaped and the shaped corpus. */
export function runStudy(ds: Dataset, splitSeed: number): StudyTable {
  const rows: StudyResult[] = [];
  for (const shaped of [false, true]) {
    rows.push(trainEval(ds, "timing", false, splitSeed, shaped));
    for (const kind of ["svm", "mlp"] as const) {
      for (const useDwt of [true, false]) {
        rows.push(trainEval(ds, kind, useDwt, splitSeed, shaped));
      }
    }
  }
  return { splitSeed, rows };
}

export function markdownTable(table: StudyTable): string {
  const models = [
    ...new Set(table.rows.flatMap((r) => Object.keys(r.perModel))),
  ].sort();
  const header = `| corpus | classifier | dwt | ${models.join(" | ")} | overall |`;
  const rule = `|${"---|".repeat(models.length + 4)}`;
  const lines = table.rows.map((r) => {
    const cells = models.map((m) =>
      m in r.perModel ? r.perModel[m].toFixed(3) : "-",
    );
    return `| ${r.shaped ? "shaped" : "unshaped"} | ${r.classifier} | ${
      r.classifier === "timing" ? "-" : r.useDwt ? "yes" : "no"
    } | ${cells.join(" | ")} | ${r.overall.toFixed(3)} |`;
  });
  return [header, rule, ...lines].join("\n") + "\n";
}
