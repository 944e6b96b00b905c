import { CLASS_COLORS } from "./palette";
import type { ImageMeta, InstancePayload } from "./types";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface EditorHandlers {
  /** fired when an anchor drag finishes; the app commits it via POST /contour */
  onVertexDrag?: (instanceId: number, index: number, x: number, y: number) => void;
  onSelectInstance?: (instanceId: number) => void;
}

export interface EditorView {
  root: SVGSVGElement;
  /** re-render the overlay from fresh (server-authoritative) instances */
  update: (instances: InstancePayload[]) => void;
  /** display-only contrast; feature values are unaffected by construction */
  setContrast: (value: number) => void;
}

/**
 * Panoramic view: class-colored contours with draggable anchor points over
 * the radiograph. Drags are optimistic while moving and always reconciled
 * with the server response afterwards; rejected edits snap back on update.
 */
export function renderEditor(
  doc: Document,
  image: ImageMeta,
  instances: InstancePayload[],
  handlers: EditorHandlers = {},
): EditorView {
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${image.width} ${image.height}`);
  svg.setAttribute("class", "panoramic-editor");
  svg.setAttribute("data-image-id", String(image.id));

  const backdrop = doc.createElementNS(SVG_NS, "g");
  backdrop.setAttribute("class", "radiograph");
  const film = doc.createElementNS(SVG_NS, "rect");
  film.setAttribute("x", "0");
  film.setAttribute("y", "0");
  film.setAttribute("width", String(image.width));
  film.setAttribute("height", String(image.height));
  film.setAttribute("fill", "#1c1c20");
  backdrop.appendChild(film);
  const caption = doc.createElementNS(SVG_NS, "text");
  caption.setAttribute("x", "8");
  caption.setAttribute("y", "18");
  caption.setAttribute("fill", "#555");
  caption.setAttribute("font-size", "12");
  caption.textContent = image.file_name;
  backdrop.appendChild(caption);
  svg.appendChild(backdrop);

  const overlay = doc.createElementNS(SVG_NS, "g");
  overlay.setAttribute("class", "contours");
  svg.appendChild(overlay);

  const toImage = (event: MouseEvent): [number, number] => {
    const rect = svg.getBoundingClientRect();
    const scaleX = rect.width > 0 ? image.width / rect.width : 1;
    const scaleY = rect.height > 0 ? image.height / rect.height : 1;
    return [(event.clientX - rect.left) * scaleX, (event.clientY - rect.top) * scaleY];
  };

  let drag: { instanceId: number; index: number; anchor: SVGCircleElement } | null = null;

  svg.addEventListener("pointermove", (event) => {
    if (!drag) return;
    const [x, y] = toImage(event as MouseEvent);
    drag.anchor.setAttribute("cx", String(x));
    drag.anchor.setAttribute("cy", String(y));
  });
  svg.addEventListener("pointerup", (event) => {
    if (!drag) return;
    const [x, y] = toImage(event as MouseEvent);
    const { instanceId, index } = drag;
    drag = null;
    handlers.onVertexDrag?.(instanceId, index, x, y);
  });

  function update(fresh: InstancePayload[]): void {
    while (overlay.firstChild) {
      overlay.removeChild(overlay.firstChild);
    }
    for (const instance of fresh) {
      const color = CLASS_COLORS[instance.class];
      const points: string[] = [];
      for (let i = 0; i < instance.polygon.length; i += 2) {
        points.push(`${instance.polygon[i]},${instance.polygon[i + 1]}`);
      }
      const contour = doc.createElementNS(SVG_NS, "polygon");
      contour.setAttribute("points", points.join(" "));
      contour.setAttribute("fill", color);
      contour.setAttribute("fill-opacity", "0.25");
      contour.setAttribute("stroke", color);
      contour.setAttribute("stroke-width", "1.5");
      contour.setAttribute("class", "contour");
      contour.setAttribute("data-instance-id", String(instance.id));
      contour.addEventListener("click", () => handlers.onSelectInstance?.(instance.id));
      overlay.appendChild(contour);

      for (let index = 0; index * 2 < instance.polygon.length; index++) {
        const anchor = doc.createElementNS(SVG_NS, "circle") as SVGCircleElement;
        anchor.setAttribute("cx", String(instance.polygon[index * 2]));
        anchor.setAttribute("cy", String(instance.polygon[index * 2 + 1]));
        anchor.setAttribute("r", "2.5");
        anchor.setAttribute("fill", "#ffffff");
        anchor.setAttribute("stroke", color);
        anchor.setAttribute("class", "anchor");
        anchor.setAttribute("data-instance-id", String(instance.id));
        anchor.setAttribute("data-vertex-index", String(index));
        anchor.addEventListener("pointerdown", (event) => {
          event.stopPropagation();
          drag = { instanceId: instance.id, index, anchor };
        });
        overlay.appendChild(anchor);
      }
    }
  }

  function setContrast(value: number): void {
    backdrop.setAttribute("filter", `contrast(${value})`);
    svg.setAttribute("data-contrast", String(value));
  }

  update(instances);
  setContrast(image.contrast);
  return { root: svg, update, setContrast };
}
