/**
 * Deterministic SVG renderers for the simulator's trace and report files:
 * a real-vs-shaped traffic comparison, stacked instruction-mix bars, and
 * grouped overhead bars.
 */

export interface TraceSeries {
  read: number[];
  write: number[];
}

const PALETTE = [
  "#4477aa", "#ee6677", "#228833", "#ccbb44",
  "#66ccee", "#aa3377", "#bbbbbb", "#222222",
];

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function parseTraceCsv(text: string): TraceSeries {
  const read: number[] = [];
  const write: number[] = [];
  for (const line of text.split(/\r?\n/)) {
    if (!line || line.startsWith("#") || line.startsWith("window")) continue;
    const [, r, w] = line.split(",");
    read.push(Number(r));
    write.push(Number(w));
  }
  return { read, write };
}

function downsample(series: number[], points: number): number[] {
  if (series.length <= points) return series;
  const out: number[] = [];
  for (let i = 0; i < points; i++) {
    const lo = Math.floor((i * series.length) / points);
    const hi = Math.max(lo + 1, Math.floor(((i + 1) * series.length) / points));
    let acc = 0;
    for (let j = lo; j < hi; j++) acc += series[j];
    out.push(acc / (hi - lo));
  }
  return out;
}

function polyline(series: number[], x0: number, y0: number, w: number, h: number,
                  peak: number, color: string): string {
  const pts = series
    .map((v, i) => {
      const x = x0 + (i / Math.max(1, series.length - 1)) * w;
      const y = y0 + h - (peak ? (v / peak) * h : 0);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  return `<polyline fill="none" stroke="${color}" stroke-width="1" points="${pts}"/>`;
}

function panel(series: TraceSeries, title: string, x0: number, y0: number,
               w: number, h: number): string {
  const read = downsample(series.read, 800);
  const write = downsample(series.write, 800);
  const peak = Math.max(1, ...read, ...write);
  return [
    `<rect x="${x0}" y="${y0}" width="${w}" height="${h}" fill="#fafafa" stroke="#999"/>`,
    polyline(read, x0, y0, w, h, peak, PALETTE[0]),
    polyline(write, x0, y0, w, h, peak, PALETTE[1]),
    `<text x="${x0 + 4}" y="${y0 + 14}" font-size="12" font-family="sans-serif">${esc(title)} (peak ${peak} B/window)</text>`,
  ].join("\n");
}

/** Two stacked panels: real traffic above, shaped traffic below. */
export function traceComparisonSvg(unshaped: TraceSeries, shaped: TraceSeries): string {
  const w = 860;
  const h = 180;
  const body = [
    panel(unshaped, "real traffic", 20, 20, w, h),
    panel(shaped, "shaped traffic", 20, 40 + h, w, h),
    `<text x="20" y="${70 + 2 * h}" font-size="11" font-family="sans-serif" fill="${PALETTE[0]}">read</text>`,
    `<text x="70" y="${70 + 2 * h}" font-size="11" font-family="sans-serif" fill="${PALETTE[1]}">write</text>`,
  ].join("\n");
  return svg(900, 100 + 2 * h, body);
}

function svg(width: number, height: number, body: string): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">\n${body}\n</svg>\n`;
}

/** Stacked instruction-mix bars, one bar per threat model. */
export function mixBarsSvg(mixes: Record<string, Record<string, number>>): string {
  const threats = Object.keys(mixes).sort();
  const kinds = [...new Set(threats.flatMap((t) => Object.keys(mixes[t])))].sort();
  const peak = Math.max(...threats.map((t) =>
    kinds.reduce((acc, k) => acc + (mixes[t][k] ?? 0), 0)));
  const barW = 60;
  const gap = 40;
  const h = 240;
  const parts: string[] = [];
  threats.forEach((threat, ti) => {
    const x = 60 + ti * (barW + gap);
    let y = 20 + h;
    kinds.forEach((kind, ki) => {
      const count = mixes[threat][kind] ?? 0;
      const bh = (count / peak) * h;
      y -= bh;
      parts.push(
        `<rect x="${x}" y="${y.toFixed(1)}" width="${barW}" height="${bh.toFixed(1)}" fill="${PALETTE[ki % PALETTE.length]}"><title>${esc(kind)}: ${count}</title></rect>`,
      );
    });
    parts.push(`<text x="${x + barW / 2}" y="${40 + h}" text-anchor="middle" font-size="12" font-family="sans-serif">${esc(threat)}</text>`);
  });
  kinds.forEach((kind, ki) => {
    const y = 30 + ki * 16;
    parts.push(`<rect x="${80 + threats.length * (barW + gap)}" y="${y - 10}" width="12" height="12" fill="${PALETTE[ki % PALETTE.length]}"/>`);
    parts.push(`<text x="${96 + threats.length * (barW + gap)}" y="${y}" font-size="11" font-family="sans-serif">${esc(kind)}</text>`);
  });
  return svg(240 + threats.length * (barW + gap), 80 + h, parts.join("\n"));
}

/** Grouped overhead bars: one group per model, one bar per configuration. */
export function overheadBarsSvg(
  overhead: Record<string, Record<string, number>>,
): string {
  const models = Object.keys(overhead).sort();
  const configs = [...new Set(models.flatMap((m) => Object.keys(overhead[m])))].sort();
  const peak = Math.max(0.01, ...models.flatMap((m) => configs.map((c) => overhead[m][c] ?? 0)));
  const barW = 18;
  const groupW = configs.length * (barW + 4) + 30;
  const h = 220;
  const parts: string[] = [];
  models.forEach((model, mi) => {
    const gx = 60 + mi * groupW;
    configs.forEach((config, ci) => {
      const v = overhead[model][config] ?? 0;
      const bh = (v / peak) * h;
      const x = gx + ci * (barW + 4);
      parts.push(
        `<rect x="${x}" y="${(20 + h - bh).toFixed(1)}" width="${barW}" height="${bh.toFixed(1)}" fill="${PALETTE[ci % PALETTE.length]}"><title>${esc(model)} ${esc(config)}: ${(v * 100).toFixed(2)}%</title></rect>`,
      );
    });
    parts.push(`<text x="${gx + (groupW - 30) / 2}" y="${40 + h}" text-anchor="middle" font-size="11" font-family="sans-serif">${esc(model)}</text>`);
  });
  configs.forEach((config, ci) => {
    const y = 30 + ci * 16;
    parts.push(`<rect x="${80 + models.length * groupW}" y="${y - 10}" width="12" height="12" fill="${PALETTE[ci % PALETTE.length]}"/>`);
    parts.push(`<text x="${96 + models.length * groupW}" y="${y}" font-size="11" font-family="sans-serif">${esc(config)}</text>`);
  });
  parts.push(`<text x="10" y="16" font-size="11" font-family="sans-serif">peak ${(peak * 100).toFixed(1)}%</text>`);
  return svg(260 + models.length * groupW, 80 + h, parts.join("\n"));
}
