/**
 * Deterministic classifiers for the layer-type study: a one-vs-rest linear
 * SVM trained with the Pegasos subgradient schedule, a single-hidden-layer
 * MLP, and the execution-time-only nearest-centroid baseline.
 */

import { mulberry32, shuffled } from "./rng.js";

export interface Classifier {
  fit(x: number[][], y: number[], nClasses: number, seed: number): void;
  predict(x: number[]): number;
}

export class LinearSvm implements Classifier {
  private weights: number[][] = [];
  private bias: number[] = [];
  constructor(
    private epochs = 80,
    private lambda = 1e-3,
  ) {}

  fit(x: number[][], y: number[], nClasses: number, seed: number): void {
    const width = x[0].length;
    this.weights = Array.from({ length: nClasses }, () => new Array(width).fill(0));
    this.bias = new Array(nClasses).fill(0);
    const rand = mulberry32(seed ^ 0x5a17);
    const order = x.map((_, i) => i);
    let t = 1;
    for (let epoch = 0; epoch < this.epochs; epoch++) {
      for (const i of shuffled(order, rand)) {
        const eta = 1 / (this.lambda * t);
        t += 1;
        for (let c = 0; c < nClasses; c++) {
          const target = y[i] === c ? 1 : -1;
          const w = this.weights[c];
          let margin = this.bias[c];
          for (let j = 0; j < width; j++) margin += w[j] * x[i][j];
          const scale = 1 - eta * this.lambda;
          for (let j = 0; j < width; j++) w[j] *= scale;
          if (target * margin < 1) {
            for (let j = 0; j < width; j++) w[j] += eta * target * x[i][j];
            this.bias[c] += eta * target * 0.1;
          }
        }
      }
    }
  }

  predict(x: number[]): number {
    let best = 0;
    let bestScore = -Infinity;
    for (let c = 0; c < this.weights.length; c++) {
      let score = this.bias[c];
      for (let j = 0; j < x.length; j++) score += this.weights[c][j] * x[j];
      if (score > bestScore) {
        bestScore = score;
        best = c;
      }
    }
    return best;
  }
}

export class Mlp implements Classifier {
  private w1: number[][] = [];
  private b1: number[] = [];
  private w2: number[][] = [];
  private b2: number[] = [];
  constructor(
    private hidden = 24,
    private epochs = 200,
    private lr = 0.05,
  ) {}

  fit(x: number[][], y: number[], nClasses: number, seed: number): void {
    const width = x[0].length;
    const rand = mulberry32(seed ^ 0x3141);
    const init = (fanIn: number) => (rand() * 2 - 1) / Math.sqrt(fanIn);
    this.w1 = Array.from({ length: this.hidden }, () =>
      Array.from({ length: width }, () => init(width)));
    this.b1 = new Array(this.hidden).fill(0);
    this.w2 = Array.from({ length: nClasses }, () =>
      Array.from({ length: this.hidden }, () => init(this.hidden)));
    this.b2 = new Array(nClasses).fill(0);
    const order = x.map((_, i) => i);
    for (let epoch = 0; epoch < this.epochs; epoch++) {
      for (const i of shuffled(order, rand)) {
        const { h, p } = this.forward(x[i]);
        const grad = p.map((v, c) => v - (y[i] === c ? 1 : 0));
        const gh = new Array(this.hidden).fill(0);
        for (let c = 0; c < grad.length; c++) {
          for (let j = 0; j < this.hidden; j++) {
            gh[j] += grad[c] * this.w2[c][j];
            this.w2[c][j] -= this.lr * grad[c] * h[j];
          }
          this.b2[c] -= this.lr * grad[c];
        }
        for (let j = 0; j < this.hidden; j++) {
          const dh = gh[j] * (1 - h[j] * h[j]); // tanh'
          for (let k = 0; k < x[i].length; k++) {
            this.w1[j][k] -= this.lr * dh * x[i][k];
          }
          this.b1[j] -= this.lr * dh;
        }
      }
    }
  }

  private forward(x: number[]): { h: number[]; p: number[] } {
    const h = this.w1.map((row, j) => {
      let acc = this.b1[j];
      for (let k = 0; k < x.length; k++) acc += row[k] * x[k];
      return Math.tanh(acc);
    });
    const logits = this.w2.map((row, c) => {
      let acc = this.b2[c];
      for (let j = 0; j < h.length; j++) acc += row[j] * h[j];
      return acc;
    });
    const peak = Math.max(...logits);
    const exps = logits.map((l) => Math.exp(l - peak));
    const total = exps.reduce((a, b) => a + b, 0);
    return { h, p: exps.map((e) => e / total) };
  }

  predict(x: number[]): number {
    const { p } = this.forward(x);
    let best = 0;
    for (let c = 1; c < p.length; c++) if (p[c] > p[best]) best = c;
    return best;
  }
}

/** Nearest class centroid over whatever feature view it is given. */
export class NearestCentroid implements Classifier {
  private centroids: number[][] = [];

  fit(x: number[][], y: number[], nClasses: number): void {
    const width = x[0].length;
    this.centroids = Array.from({ length: nClasses }, () => new Array(width).fill(0));
    const counts = new Array(nClasses).fill(0);
    for (let i = 0; i < x.length; i++) {
      counts[y[i]] += 1;
      for (let j = 0; j < width; j++) this.centroids[y[i]][j] += x[i][j];
    }
    for (let c = 0; c < nClasses; c++) {
      if (counts[c]) for (let j = 0; j < width; j++) this.centroids[c][j] /= counts[c];
      else this.centroids[c].fill(Number.POSITIVE_INFINITY);
    }
  }

  predict(x: number[]): number {
    let best = 0;
    let bestDist = Infinity;
    for (let c = 0; c < this.centroids.length; c++) {
      let d = 0;
      for (let j = 0; j < x.length; j++) d += (x[j] - this.centroids[c][j]) ** 2;
      if (d < bestDist) {
        bestDist = d;
        best = c;
      }
    }
    return best;
  }
}

/** Nearest neighbour: with the duration-only view this is the "attacker who
 * knows only the layer termination times" baseline at full strength. */
export class NearestNeighbor implements Classifier {
  private x: number[][] = [];
  private y: number[] = [];

  fit(x: number[][], y: number[]): void {
    this.x = x;
    this.y = y;
  }

  predict(v: number[]): number {
    let best = 0;
    let bestDist = Infinity;
    for (let i = 0; i < this.x.length; i++) {
      let d = 0;
      for (let j = 0; j < v.length; j++) d += (v[j] - this.x[i][j]) ** 2;
      if (d < bestDist) {
        bestDist = d;
        best = this.y[i];
      }
    }
    return best;
  }
}

export function makeClassifier(kind: "svm" | "mlp" | "timing"): Classifier {
  if (kind === "svm") return new LinearSvm();
  if (kind === "mlp") return new Mlp();
  return new NearestNeighbor();
}
