/**
 * Minimal SVG scene builder: enough axes, lines, dots and cells for the
 * three figure kinds, with no rendering dependencies.
 */

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export class Svg {
  private parts: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
      `<rect width="${width}" height="${height}" fill="white"/>`,
    );
  }

  raw(fragment: string): void {
    this.parts.push(fragment);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = ""): void {
    const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${r(x1)}" y1="${r(y1)}" x2="${r(x2)}" y2="${r(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"${dashAttr}/>`,
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 1.5, dash = ""): void {
    if (points.length === 0) return;
    const coords = points.map(([x, y]) => `${r(x)},${r(y)}`).join(" ");
    const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<polyline points="${coords}" fill="none" stroke="${stroke}" ` +
        `stroke-width="${width}"${dashAttr} stroke-linejoin="round"/>`,
    );
  }

  circle(x: number, y: number, radius: number, fill: string, stroke = "none"): void {
    this.parts.push(
      `<circle cx="${r(x)}" cy="${r(y)}" r="${radius}" fill="${fill}" stroke="${stroke}"/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string, stroke = "none"): void {
    this.parts.push(
      `<rect x="${r(x)}" y="${r(y)}" width="${r(w)}" height="${r(h)}" fill="${fill}" stroke="${stroke}"/>`,
    );
  }

  text(
    x: number,
    y: number,
    content: string,
    opts: { size?: number; anchor?: string; fill?: string; rotate?: number; bold?: boolean } = {},
  ): void {
    const { size = 12, anchor = "start", fill = "#222", rotate, bold = false } = opts;
    const transform = rotate !== undefined ? ` transform="rotate(${rotate} ${r(x)} ${r(y)})"` : "";
    const weight = bold ? ` font-weight="bold"` : "";
    this.parts.push(
      `<text x="${r(x)}" y="${r(y)}" font-size="${size}" text-anchor="${anchor}" ` +
        `fill="${fill}"${weight}${transform}>${esc(content)}</text>`,
    );
  }

  toString(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

function r(v: number): string {
  return Number(v.toFixed(2)).toString();
}

export function frame(width: number, height: number, xr: [number, number], yr: [number, number]): Frame {
  return {
    width,
    height,
    left: 70,
    right: width - 25,
    top: 45,
    bottom: height - 55,
    xMin: xr[0],
    xMax: xr[1],
    yMin: yr[0],
    yMax: yr[1],
  };
}

export const xPix = (f: Frame, x: number): number =>
  f.left + ((x - f.xMin) / (f.xMax - f.xMin || 1)) * (f.right - f.left);

export const yPix = (f: Frame, y: number): number =>
  f.bottom - ((y - f.yMin) / (f.yMax - f.yMin || 1)) * (f.bottom - f.top);

export function ticks(lo: number, hi: number, count = 6): number[] {
  if (!(hi > lo)) return [lo];
  const rawStep = (hi - lo) / count;
  const magnitude = 10 ** Math.floor(Math.log10(rawStep));
  const candidates = [1, 2, 2.5, 5, 10].map((m) => m * magnitude);
  const step = candidates.find((c) => c >= rawStep) ?? rawStep;
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + step * 1e-9; v += step) out.push(Number(v.toPrecision(12)));
  return out;
}

export function fmtTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10000) return Number(v.toPrecision(4)).toString();
  return v.toExponential(1);
}

export function drawAxes(
  svg: Svg,
  f: Frame,
  title: string,
  xLabel: string,
  yLabel: string,
): void {
  svg.text((f.left + f.right) / 2, 24, title, { size: 15, anchor: "middle", bold: true });
  svg.line(f.left, f.bottom, f.right, f.bottom, "#222");
  svg.line(f.left, f.top, f.left, f.bottom, "#222");
  for (const t of ticks(f.xMin, f.xMax)) {
    const x = xPix(f, t);
    svg.line(x, f.bottom, x, f.bottom + 4, "#222");
    svg.line(x, f.top, x, f.bottom, "#eee");
    svg.text(x, f.bottom + 18, fmtTick(t), { size: 10, anchor: "middle", fill: "#444" });
  }
  for (const t of ticks(f.yMin, f.yMax)) {
    const y = yPix(f, t);
    svg.line(f.left - 4, y, f.left, y, "#222");
    svg.line(f.left, y, f.right, y, "#eee");
    svg.text(f.left - 7, y + 3, fmtTick(t), { size: 10, anchor: "end", fill: "#444" });
  }
  svg.text((f.left + f.right) / 2, f.height - 14, xLabel, { size: 12, anchor: "middle" });
  svg.text(18, (f.top + f.bottom) / 2, yLabel, {
    size: 12,
    anchor: "middle",
    rotate: -90,
  });
}

/** Evenly spaced, reasonably distinct line colors. */
export function seriesColor(index: number, total: number): string {
  const hue = Math.round((360 * index) / Math.max(total, 1));
  return `hsl(${hue}, 65%, 45%)`;
}
