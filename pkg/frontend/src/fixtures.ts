/**
 * Generates the study corpus by driving the simulator's command-line
 * pipeline (its public interface): compile + run + attack --features for a
 * set of catalog models, seeds, and both traffic modes.
 */

import { execFileSync } from "node:child_process";
import { existsSync, mkdirSync, rmSync } from "node:fs";
import { join } from "node:path";

export interface FixtureConfig {
  outDir: string;
  models?: string[];
  seeds?: number[];
  scale?: number;
  python?: string;
}

export function generateFixtures(cfg: FixtureConfig): string {
  const models = cfg.models ?? ["alexnet", "vgg11", "resnet18"];
  const seeds = cfg.seeds ?? [0, 1, 2];
  const scale = cfg.scale ?? 8;
  const python = cfg.python ?? "python3";
  const features = join(cfg.outDir, "features.csv");
  rmSync(features, { force: true });
  mkdirSync(cfg.outDir, { recursive: true });

  const sim = (args: string[]) =>
    execFileSync(python, ["-m", "sesm.cli", ...args], { stdio: "pipe" });

  for (const model of models) {
    for (const threat of ["pp", "ss"]) {
      const prog = join(cfg.outDir, `${model}-${threat}.bin`);
      sim(["compile", "--model", model, "--scale", String(scale),
           "--threat", threat, "--out", prog, "--tune-sims", "0"]);
      for (const seed of seeds) {
        const runDir = join(cfg.outDir, `${model}-${threat}-s${seed}`);
        sim(["run", prog, "--out", runDir, "--seed", String(seed)]);
        sim(["attack",
             "--trace", join(runDir, "attacker.csv"),
             "--truth", join(runDir, "privileged.t0.csv"),
             "--mode", threat === "pp" ? "unshaped" : "shaped",
             "--report", join(runDir, "attack.json"),
             "--features", features,
             "--model-name", model]);
      }
    }
  }
  if (!existsSync(features)) throw new Error("fixture generation wrote nothing");
  return features;
}

if (process.argv[1] && /fixtures\.(ts|js)$/.test(process.argv[1])) {
  const out = process.argv[2] ?? "fixtures";
  console.log(generateFixtures({ outDir: out }));
}
