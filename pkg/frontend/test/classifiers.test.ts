import { describe, expect, it } from "vitest";
import { LinearSvm, Mlp, NearestCentroid } from "../src/classifiers.js";
import { mulberry32 } from "../src/rng.js";

function clusters(seed: number, perClass = 40) {
  // three linearly separable blobs in 4 dimensions
  const rand = mulberry32(seed);
  const centers = [
    [2, 0, 0, -1],
    [-2, 1, 0, 1],
    [0, -2, 2, 0],
  ];
  const x: number[][] = [];
  const y: number[] = [];
  centers.forEach((center, label) => {
    for (let i = 0; i < perClass; i++) {
      x.push(center.map((c) => c + (rand() - 0.5) * 0.8));
      y.push(label);
    }
  });
  return { x, y };
}

function accuracy(model: { predict(v: number[]): number }, x: number[][], y: number[]) {
  let hits = 0;
  for (let i = 0; i < x.length; i++) if (model.predict(x[i]) === y[i]) hits++;
  return hits / x.length;
}

describe("classifiers on separable blobs", () => {
  const train = clusters(1);
  const test = clusters(2, 15);

  it("linear svm separates", () => {
    const svm = new LinearSvm();
    svm.fit(train.x, train.y, 3, 0);
    expect(accuracy(svm, test.x, test.y)).toBeGreaterThanOrEqual(0.95);
  });

  it("mlp separates", () => {
    const mlp = new Mlp();
    mlp.fit(train.x, train.y, 3, 0);
    expect(accuracy(mlp, test.x, test.y)).toBeGreaterThanOrEqual(0.95);
  });

  it("nearest centroid separates", () => {
    const nc = new NearestCentroid();
    nc.fit(train.x, train.y, 3);
    expect(accuracy(nc, test.x, test.y)).toBeGreaterThanOrEqual(0.95);
  });

  it("training is deterministic for a seed", () => {
    const a = new Mlp();
    const b = new Mlp();
    a.fit(train.x, train.y, 3, 42);
    b.fit(train.x, train.y, 3, 42);
    expect(test.x.map((v) => a.predict(v))).toEqual(test.x.map((v) => b.predict(v)));
  });
});
