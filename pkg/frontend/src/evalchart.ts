import type { HistoryEntry } from "./types";

const SVG_NS = "http://www.w3.org/2000/svg";

export const METRIC_COLORS: Record<string, string> = {
  iou: "#2e6fd8",
  precision: "#59a14f",
  recall: "#f2b705",
  f1: "#e15759",
};

/**
 * Polyline path over (x, value) points; null values (failed rounds) leave a
 * gap instead of dropping to zero.
 */
export function buildSeriesPath(
  values: (number | null)[],
  xs: number[],
  sy: (v: number) => number,
): string {
  const parts: string[] = [];
  let pen = false;
  values.forEach((value, i) => {
    if (value === null) {
      pen = false;
      return;
    }
    parts.push(`${pen ? "L" : "M"} ${xs[i]} ${sy(value)}`);
    pen = true;
  });
  return parts.join(" ");
}

export interface EvalChartOptions {
  width?: number;
  height?: number;
  /** round number currently running, rendered as a pending marker */
  pendingRound?: number | null;
  /** round numbers that failed, rendered as gap markers */
  failedRounds?: number[];
}

/** One line per metric across rounds; y axis fixed to 0..100 percent. */
export function renderEvalChart(
  doc: Document,
  history: HistoryEntry[],
  options: EvalChartOptions = {},
): SVGSVGElement {
  const width = options.width ?? 420;
  const height = options.height ?? 200;
  const pad = 28;
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "eval-chart");

  const rounds = history.map((entry) => entry.round);
  const failed = options.failedRounds ?? [];
  const allRounds = [...new Set([...rounds, ...failed])].sort((a, b) => a - b);
  if (options.pendingRound != null && !allRounds.includes(options.pendingRound)) {
    allRounds.push(options.pendingRound);
  }
  const n = Math.max(allRounds.length, 1);
  const sx = (i: number) => pad + (n === 1 ? 0 : (i * (width - 2 * pad)) / (n - 1));
  const sy = (v: number) => height - pad - (v / 100) * (height - 2 * pad);

  const byRound = new Map(history.map((entry) => [entry.round, entry]));
  const xs = allRounds.map((_, i) => sx(i));

  for (const metric of ["iou", "precision", "recall", "f1"] as const) {
    const values = allRounds.map((round) => {
      const entry = byRound.get(round);
      return entry ? entry[metric] : null;
    });
    const path = doc.createElementNS(SVG_NS, "path");
    path.setAttribute("d", buildSeriesPath(values, xs, sy));
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", METRIC_COLORS[metric]);
    path.setAttribute("stroke-width", "2");
    path.setAttribute("class", `series series-${metric}`);
    svg.appendChild(path);
  }

  allRounds.forEach((round, i) => {
    const tick = doc.createElementNS(SVG_NS, "text");
    tick.setAttribute("x", String(xs[i]));
    tick.setAttribute("y", String(height - 8));
    tick.setAttribute("text-anchor", "middle");
    tick.setAttribute("font-size", "10");
    tick.setAttribute("class", "round-tick");
    tick.setAttribute("data-round", String(round));
    tick.textContent = String(round);
    svg.appendChild(tick);

    if (failed.includes(round)) {
      const marker = doc.createElementNS(SVG_NS, "text");
      marker.setAttribute("x", String(xs[i]));
      marker.setAttribute("y", String(height - pad - 4));
      marker.setAttribute("text-anchor", "middle");
      marker.setAttribute("fill", "#d84b3a");
      marker.setAttribute("class", "failed-marker");
      marker.textContent = "x";
      svg.appendChild(marker);
    }
    if (options.pendingRound === round) {
      const marker = doc.createElementNS(SVG_NS, "circle");
      marker.setAttribute("cx", String(xs[i]));
      marker.setAttribute("cy", String(height - pad - 8));
      marker.setAttribute("r", "4");
      marker.setAttribute("fill", "none");
      marker.setAttribute("stroke", "#888");
      marker.setAttribute("stroke-dasharray", "2 2");
      marker.setAttribute("class", "pending-marker");
      svg.appendChild(marker);
    }
  });

  return svg;
}
