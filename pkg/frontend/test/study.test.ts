/**
 * The classification study against a corpus generated by the simulator's
 * own pipeline (compile, run, attack --features), driven through its
 * command-line interface only.
 */

import { beforeAll, describe, expect, it } from "vitest";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { Dataset, loadFeatures } from "../src/dataset.js";
import { generateFixtures } from "../src/fixtures.js";
import { markdownTable, runStudy, trainEval } from "../src/study.js";

let ds: Dataset;

beforeAll(() => {
  const out = mkdtempSync(join(tmpdir(), "classifier-lab-"));
  const csv = generateFixtures({ outDir: out });
  ds = loadFeatures(csv);
}, 600_000);

describe("corpus", () => {
  it("contains shaped and unshaped rows for every model", () => {
    const models = new Set(ds.rows.map((r) => r.model));
    expect(models).toEqual(new Set(["alexnet", "vgg11", "resnet18"]));
    expect(ds.rows.some((r) => r.shaped)).toBe(true);
    expect(ds.rows.some((r) => !r.shaped)).toBe(true);
  });
});

describe("layer-type classification study", () => {
  it("svm and mlp reach 0.95 accuracy on unshaped alexnet/vgg analogs", () => {
    for (const kind of ["svm", "mlp"] as const) {
      const res = trainEval(ds, kind, true, 0, false);
      for (const model of ["alexnet", "vgg11"]) {
        expect(res.perModel[model], `${kind} on ${model}`).toBeGreaterThanOrEqual(0.95);
      }
    }
  });

  it("shaped accuracy collapses to the execution-time-only baseline", () => {
    const baseline = trainEval(ds, "timing", false, 0, true);
    for (const kind of ["svm", "mlp"] as const) {
      const res = trainEval(ds, kind, true, 0, true);
      expect(res.overall).toBeLessThanOrEqual(baseline.overall + 0.05);
    }
  });

  it("frequency-domain features help on unshaped resnet-class data", () => {
    for (const kind of ["svm", "mlp"] as const) {
      const withDwt = trainEval(ds, kind, true, 0, false);
      const without = trainEval(ds, kind, false, 0, false);
      expect(withDwt.perModel["resnet18"]).toBeGreaterThanOrEqual(
        without.perModel["resnet18"]);
    }
  });

  it("shaped accuracy never beats unshaped for the same classifier", () => {
    for (const kind of ["svm", "mlp"] as const) {
      for (const useDwt of [true, false]) {
        const unshaped = trainEval(ds, kind, useDwt, 0, false);
        const shaped = trainEval(ds, kind, useDwt, 0, true);
        expect(shaped.overall).toBeLessThanOrEqual(unshaped.overall);
      }
    }
  });

  it("is deterministic for a split seed", () => {
    const a = runStudy(ds, 3);
    const b = runStudy(ds, 3);
    expect(a).toEqual(b);
  });

  it("renders a markdown accuracy table", () => {
    const table = markdownTable(runStudy(ds, 0));
    expect(table).toContain("| corpus | classifier | dwt |");
    expect(table).toContain("unshaped");
    expect(table).toContain("alexnet");
  });
});
