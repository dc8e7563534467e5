/**
 * Feature-export parsing and dataset handling.
 *
 * The simulator's attack stage appends one row per layer segment:
 *   model,shaped,label,f0..f41
 * Features are per channel (read then write): total, median, peak,
 * standard deviation, duration, then 16 Haar wavelet coefficients.
 */

import { readFileSync } from "node:fs";
import { mulberry32, shuffled } from "./rng.js";

export const FEATURES_PER_CHANNEL = 21;
export const FEATURE_WIDTH = 2 * FEATURES_PER_CHANNEL;

/** Indices of the time/magnitude statistics (no frequency-domain signal). */
export const STAT_INDICES = [0, 1, 2, 3, 4, 21, 22, 23, 24, 25];
/** Index of the segment duration, the "execution time only" signal. */
export const DURATION_INDEX = 4;

export interface FeatureRow {
  model: string;
  shaped: boolean;
  label: string;
  features: number[];
}

export interface Dataset {
  rows: FeatureRow[];
  labels: string[];
}

export class DegenerateDataset extends Error {}

export function parseFeatureCsv(text: string): Dataset {
  const lines = text.trim().split(/\r?\n/);
  if (lines.length < 2 || !lines[0].startsWith("model,")) {
    throw new DegenerateDataset("not a feature export: missing header");
  }
  const rows: FeatureRow[] = [];
  for (const line of lines.slice(1)) {
    if (!line) continue;
    const parts = line.split(",");
    const features = parts.slice(3).map(Number);
    if (features.length !== FEATURE_WIDTH || features.some(Number.isNaN)) {
      throw new DegenerateDataset(`bad feature row: ${line.slice(0, 60)}`);
    }
    rows.push({
      model: parts[0],
      shaped: parts[1] === "1",
      label: parts[2],
      features,
    });
  }
  const labels = [...new Set(rows.map((r) => r.label))].sort();
  return { rows, labels };
}

export function loadFeatures(path: string): Dataset {
  return parseFeatureCsv(readFileSync(path, "utf-8"));
}

export function filterRows(
  ds: Dataset,
  pred: (row: FeatureRow) => boolean,
): Dataset {
  const rows = ds.rows.filter(pred);
  return { rows, labels: [...new Set(rows.map((r) => r.label))].sort() };
}

/** Select the feature view: full vector, stats only, or duration only. */
export function featureView(
  row: FeatureRow,
  view: "all" | "stats" | "duration",
): number[] {
  if (view === "all") return row.features;
  if (view === "stats") return STAT_INDICES.map((i) => row.features[i]);
  return [row.features[DURATION_INDEX]];
}

export interface Split {
  train: FeatureRow[];
  test: FeatureRow[];
}

/** Stratified 80/20 split, deterministic for a seed. */
export function splitDataset(ds: Dataset, seed: number, testFraction = 0.2): Split {
  if (ds.labels.length < 2) {
    throw new DegenerateDataset("need at least two classes to train");
  }
  const rand = mulberry32(seed);
  const train: FeatureRow[] = [];
  const test: FeatureRow[] = [];
  for (const label of ds.labels) {
    const group = shuffled(ds.rows.filter((r) => r.label === label), rand);
    const nTest = Math.max(1, Math.floor(group.length * testFraction));
    test.push(...group.slice(0, nTest));
    train.push(...group.slice(nTest));
  }
  return { train, test };
}

export interface Standardizer {
  mean: number[];
  std: number[];
}

export function fitStandardizer(vectors: number[][]): Standardizer {
  const width = vectors[0].length;
  const mean = new Array(width).fill(0);
  const std = new Array(width).fill(0);
  for (const v of vectors) for (let i = 0; i < width; i++) mean[i] += v[i];
  for (let i = 0; i < width; i++) mean[i] /= vectors.length;
  for (const v of vectors)
    for (let i = 0; i < width; i++) std[i] += (v[i] - mean[i]) ** 2;
  for (let i = 0; i < width; i++)
    std[i] = Math.sqrt(std[i] / vectors.length) || 1;
  return { mean, std };
}

export function standardize(v: number[], s: Standardizer): number[] {
  return v.map((x, i) => (x - s.mean[i]) / s.std[i]);
}
