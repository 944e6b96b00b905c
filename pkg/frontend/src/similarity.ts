import type { NeighborEntry } from "./types";

/**
 * Historical labeled samples closest to the selected instance, already
 * ordered by projected-plane distance by the service; each row pairs the
 * panoramic slice (bounding box) with its glyph.
 */
export function renderSimilarityList(
  doc: Document,
  neighbors: NeighborEntry[],
  makeGlyph: (instanceId: number) => Promise<Element>,
): HTMLElement {
  const list = doc.createElement("ol");
  list.className = "similarity-list";
  neighbors.forEach((neighbor) => {
    const item = doc.createElement("li");
    item.className = "similarity-entry";
    item.dataset.instanceId = String(neighbor.instance_id);
    item.dataset.distance = String(neighbor.distance);

    const slice = doc.createElement("div");
    slice.className = "slice";
    const [x0, y0, x1, y1] = neighbor.bbox;
    slice.textContent = `#${neighbor.instance_id} ${neighbor.class} @ [${x0.toFixed(0)},${y0.toFixed(0)}]-[${x1.toFixed(0)},${y1.toFixed(0)}]`;
    item.appendChild(slice);

    const distance = doc.createElement("span");
    distance.className = "distance";
    distance.textContent = neighbor.distance.toFixed(3);
    item.appendChild(distance);

    makeGlyph(neighbor.instance_id).then((glyph) => item.appendChild(glyph));
    list.appendChild(item);
  });
  return list;
}
