import { CLASS_COLORS, DEVIATION_COLORS, TOOTH_CLASSES } from "./palette";
import type {
  ClassStatsEntry,
  FeaturePayload,
  ToothClass,
} from "./types";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface GlyphElement {
  kind: "bar" | "dial";
  dimension: string;
  value: number;
  /** 0..1 position within the class band (mean - 3 sigma .. mean + 3 sigma) */
  normalized: number;
  color: string;
}

export interface GlyphSpec {
  elements: GlyphElement[]; // 7 bars then dx, dy, angle dials
  toothClass: ToothClass;
  classColor: string;
  degenerateAngle: boolean;
}

function normalize(value: number, mean: number, std: number): number {
  if (std <= 0) {
    return 0.5;
  }
  const t = (value - (mean - 3 * std)) / (6 * std);
  return Math.min(1, Math.max(0, t));
}

/**
 * Colors derive only from the deviation flags of the features payload;
 * dial/bar extents auto-scale to the class band when stats are given.
 */
export function buildGlyphSpec(
  features: FeaturePayload,
  stats?: ClassStatsEntry,
): GlyphSpec {
  const { values, dimensions } = features.vector;
  const elements: GlyphElement[] = values.map((value, i) => ({
    kind: i < 7 ? "bar" : "dial",
    dimension: dimensions[i],
    value,
    normalized: stats
      ? normalize(value, stats.mean[i], stats.std[i])
      : 1 / (1 + Math.exp(-value / 10)),
    color: DEVIATION_COLORS[features.deviation.flags[i]],
  }));
  return {
    elements,
    toothClass: features.class,
    classColor: CLASS_COLORS[features.class],
    degenerateAngle: features.vector.degenerate_angle,
  };
}

export interface GlyphHandlers {
  /** fires with the next class in the cycle when the dental legend is clicked */
  onLegendClick?: (next: ToothClass) => void;
}

function polar(cx: number, cy: number, radius: number, angle: number): [number, number] {
  return [cx + radius * Math.cos(angle), cy + radius * Math.sin(angle)];
}

/**
 * Radial bar chart for the seven shape values, dashboard dials for the two
 * center offsets and the midline angle, and a class-colored dental legend in
 * the middle. Clicking the legend cycles the label (one set_label request
 * per click).
 */
export function renderGlyph(
  doc: Document,
  spec: GlyphSpec,
  size = 160,
  handlers: GlyphHandlers = {},
): SVGSVGElement {
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${size} ${size}`);
  svg.setAttribute("width", String(size));
  svg.setAttribute("height", String(size));
  svg.setAttribute("class", "glyph");
  const cx = size / 2;
  const cy = size / 2;
  const innerR = size * 0.16;
  const maxBar = size * 0.26;

  // seven radial bars across the upper 240 degrees
  const bars = spec.elements.filter((e) => e.kind === "bar");
  bars.forEach((element, i) => {
    const angle = -Math.PI * 0.75 + (i * (Math.PI * 1.5)) / (bars.length - 1);
    const [x0, y0] = polar(cx, cy, innerR + 2, angle);
    const [x1, y1] = polar(cx, cy, innerR + 2 + maxBar * element.normalized, angle);
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(x0));
    line.setAttribute("y1", String(y0));
    line.setAttribute("x2", String(x1));
    line.setAttribute("y2", String(y1));
    line.setAttribute("stroke", element.color);
    line.setAttribute("stroke-width", String(size * 0.045));
    line.setAttribute("stroke-linecap", "round");
    line.setAttribute("class", "glyph-bar");
    line.setAttribute("data-dimension", element.dimension);
    line.setAttribute("data-color", element.color);
    svg.appendChild(line);
  });

  // three dials along the bottom arc: dx, dy, angle
  const dials = spec.elements.filter((e) => e.kind === "dial");
  dials.forEach((element, i) => {
    const group = doc.createElementNS(SVG_NS, "g");
    group.setAttribute("class", "glyph-dial");
    group.setAttribute("data-dimension", element.dimension);
    group.setAttribute("data-color", element.color);
    const gx = cx + (i - 1) * size * 0.3;
    const gy = size * 0.88;
    const radius = size * 0.09;
    const arc = doc.createElementNS(SVG_NS, "path");
    const [ax, ay] = polar(gx, gy, radius, Math.PI);
    const [bx, by] = polar(gx, gy, radius, 0);
    arc.setAttribute("d", `M ${ax} ${ay} A ${radius} ${radius} 0 0 1 ${bx} ${by}`);
    arc.setAttribute("fill", "none");
    arc.setAttribute("stroke", "#d8d8d8");
    arc.setAttribute("stroke-width", String(size * 0.02));
    group.appendChild(arc);
    const needleAngle = Math.PI + element.normalized * Math.PI;
    const [nx, ny] = polar(gx, gy, radius, needleAngle);
    const needle = doc.createElementNS(SVG_NS, "line");
    needle.setAttribute("x1", String(gx));
    needle.setAttribute("y1", String(gy));
    needle.setAttribute("x2", String(nx));
    needle.setAttribute("y2", String(ny));
    needle.setAttribute("stroke", element.color);
    needle.setAttribute("stroke-width", String(size * 0.025));
    needle.setAttribute("class", "glyph-needle");
    needle.setAttribute("data-color", element.color);
    group.appendChild(needle);
    svg.appendChild(group);
  });

  // dental legend: center shape colored by the identified class
  const legend = doc.createElementNS(SVG_NS, "circle");
  legend.setAttribute("cx", String(cx));
  legend.setAttribute("cy", String(cy));
  legend.setAttribute("r", String(innerR));
  legend.setAttribute("fill", spec.classColor);
  legend.setAttribute("class", "glyph-legend");
  legend.setAttribute("data-class", spec.toothClass);
  legend.addEventListener("click", () => {
    const index = TOOTH_CLASSES.indexOf(spec.toothClass);
    const next = TOOTH_CLASSES[(index + 1) % TOOTH_CLASSES.length];
    handlers.onLegendClick?.(next);
  });
  svg.appendChild(legend);

  const label = doc.createElementNS(SVG_NS, "text");
  label.setAttribute("x", String(cx));
  label.setAttribute("y", String(cy + size * 0.02));
  label.setAttribute("text-anchor", "middle");
  label.setAttribute("font-size", String(size * 0.07));
  label.setAttribute("fill", "#ffffff");
  label.setAttribute("class", "glyph-legend-label");
  label.textContent = spec.toothClass;
  svg.appendChild(label);

  return svg;
}
