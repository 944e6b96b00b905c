import { CLASS_COLORS } from "./palette";
import type { ProjectionPayload, ProjectionPoint } from "./types";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface Extent {
  minX: number;
  maxX: number;
  minY: number;
  maxY: number;
}

export function computeExtent(points: ProjectionPoint[]): Extent {
  if (points.length === 0) {
    return { minX: -1, maxX: 1, minY: -1, maxY: 1 };
  }
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const p of points) {
    minX = Math.min(minX, p.x);
    maxX = Math.max(maxX, p.x);
    minY = Math.min(minY, p.y);
    maxY = Math.max(maxY, p.y);
  }
  if (minX === maxX) {
    minX -= 1;
    maxX += 1;
  }
  if (minY === maxY) {
    minY -= 1;
    maxY += 1;
  }
  return { minX, maxX, minY, maxY };
}

export interface Scales {
  sx: (v: number) => number;
  sy: (v: number) => number;
}

export function makeScales(extent: Extent, width: number, height: number, pad = 20): Scales {
  const sx = (v: number) =>
    pad + ((v - extent.minX) / (extent.maxX - extent.minX)) * (width - 2 * pad);
  const sy = (v: number) =>
    height - pad - ((v - extent.minY) / (extent.maxY - extent.minY)) * (height - 2 * pad);
  return { sx, sy };
}

export interface ScatterHandlers {
  onSelect?: (instanceId: number) => void;
  onBrush?: (instanceIds: number[]) => void;
}

/**
 * Marker legend: annotated training samples are solid (semi-transparent)
 * circles, newly loaded model samples are larger circles with a black
 * outline, expert-selected samples are crosses. Click selects one point;
 * dragging on the background brushes a batch.
 */
export function renderScatterplot(
  doc: Document,
  payload: ProjectionPayload,
  handlers: ScatterHandlers = {},
  width = 420,
  height = 320,
): SVGSVGElement {
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "scatterplot");

  const backdrop = doc.createElementNS(SVG_NS, "rect");
  backdrop.setAttribute("x", "0");
  backdrop.setAttribute("y", "0");
  backdrop.setAttribute("width", String(width));
  backdrop.setAttribute("height", String(height));
  backdrop.setAttribute("fill", "#fafafa");
  svg.appendChild(backdrop);

  const { sx, sy } = makeScales(computeExtent(payload.points), width, height);
  const positions = new Map<number, [number, number]>();

  for (const point of payload.points) {
    const x = sx(point.x);
    const y = sy(point.y);
    positions.set(point.instance_id, [x, y]);
    const color = CLASS_COLORS[point.class];
    let node: SVGElement;
    if (point.marker === "expert") {
      // cross
      node = doc.createElementNS(SVG_NS, "path");
      const r = 4.2;
      node.setAttribute(
        "d",
        `M ${x - r} ${y - r} L ${x + r} ${y + r} M ${x - r} ${y + r} L ${x + r} ${y - r}`,
      );
      node.setAttribute("stroke", color);
      node.setAttribute("stroke-width", "2.2");
      node.setAttribute("fill", "none");
    } else if (point.marker === "new") {
      // circle with black outline, larger and more opaque than train
      node = doc.createElementNS(SVG_NS, "circle");
      node.setAttribute("cx", String(x));
      node.setAttribute("cy", String(y));
      node.setAttribute("r", "4.5");
      node.setAttribute("fill", color);
      node.setAttribute("fill-opacity", "0.9");
      node.setAttribute("stroke", "#000000");
      node.setAttribute("stroke-width", "1.2");
    } else {
      // solid circle, higher transparency
      node = doc.createElementNS(SVG_NS, "circle");
      node.setAttribute("cx", String(x));
      node.setAttribute("cy", String(y));
      node.setAttribute("r", "3.2");
      node.setAttribute("fill", color);
      node.setAttribute("fill-opacity", "0.45");
      node.setAttribute("stroke", "none");
    }
    node.setAttribute("class", "scatter-point");
    node.setAttribute("data-instance-id", String(point.instance_id));
    node.setAttribute("data-marker", point.marker);
    node.setAttribute("data-class", point.class);
    node.addEventListener("click", (event) => {
      event.stopPropagation();
      handlers.onSelect?.(point.instance_id);
    });
    svg.appendChild(node);
  }

  // brush: drag a rectangle on the backdrop, report points inside
  let anchor: [number, number] | null = null;
  let brushRect: SVGRectElement | null = null;

  const toLocal = (event: MouseEvent): [number, number] => {
    const rect = svg.getBoundingClientRect();
    const scaleX = rect.width > 0 ? width / rect.width : 1;
    const scaleY = rect.height > 0 ? height / rect.height : 1;
    return [(event.clientX - rect.left) * scaleX, (event.clientY - rect.top) * scaleY];
  };

  svg.addEventListener("pointerdown", (event) => {
    anchor = toLocal(event as MouseEvent);
    brushRect = doc.createElementNS(SVG_NS, "rect") as SVGRectElement;
    brushRect.setAttribute("class", "brush");
    brushRect.setAttribute("fill", "#2e6fd8");
    brushRect.setAttribute("fill-opacity", "0.15");
    brushRect.setAttribute("stroke", "#2e6fd8");
    svg.appendChild(brushRect);
  });
  svg.addEventListener("pointermove", (event) => {
    if (!anchor || !brushRect) return;
    const [x, y] = toLocal(event as MouseEvent);
    brushRect.setAttribute("x", String(Math.min(anchor[0], x)));
    brushRect.setAttribute("y", String(Math.min(anchor[1], y)));
    brushRect.setAttribute("width", String(Math.abs(x - anchor[0])));
    brushRect.setAttribute("height", String(Math.abs(y - anchor[1])));
  });
  svg.addEventListener("pointerup", (event) => {
    if (!anchor || !brushRect) return;
    const [x, y] = toLocal(event as MouseEvent);
    const x0 = Math.min(anchor[0], x);
    const x1 = Math.max(anchor[0], x);
    const y0 = Math.min(anchor[1], y);
    const y1 = Math.max(anchor[1], y);
    brushRect.remove();
    brushRect = null;
    anchor = null;
    if (x1 - x0 > 3 && y1 - y0 > 3) {
      const chosen: number[] = [];
      for (const [instanceId, [px, py]] of positions) {
        if (px >= x0 && px <= x1 && py >= y0 && py <= y1) {
          chosen.push(instanceId);
        }
      }
      handlers.onBrush?.(chosen);
    }
  });

  return svg;
}
