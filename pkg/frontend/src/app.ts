import { ApiClient, ApiError } from "./api";
import { renderEditor, type EditorView } from "./editor";
import { renderEvalChart } from "./evalchart";
import { buildGlyphSpec, renderGlyph } from "./glyph";
import { renderScatterplot } from "./scatterplot";
import { renderSimilarityList } from "./similarity";
import type { ImageMeta, ProjectionPayload } from "./types";

/**
 * Control panel + five linked views. The UI never owns state: every action
 * posts to the service and re-renders from the response, so a reload always
 * reproduces what is on screen.
 */
export class App {
  private api: ApiClient;
  private doc: Document;
  private editor: EditorView | null = null;
  private currentImage: ImageMeta | null = null;
  private brushed: number[] = [];
  private lastProjectionRevision: number | null = null;

  constructor(doc: Document, api: ApiClient = new ApiClient()) {
    this.doc = doc;
    this.api = api;
  }

  private el(id: string): HTMLElement {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node;
  }

  private status(message: string): void {
    this.el("status").textContent = message;
  }

  async start(): Promise<void> {
    this.el("refit").addEventListener("click", () => void this.refit());
    this.el("train").addEventListener("click", () => void this.train());
    this.el("select-brushed").addEventListener("click", () => void this.selectBrushed());
    this.el("segment").addEventListener("click", () => void this.segmentCurrent());
    const slider = this.el("contrast") as HTMLInputElement;
    slider.addEventListener("input", () => {
      this.editor?.setContrast(Number(slider.value));
    });

    const images = await this.api.images();
    const picker = this.el("image-picker") as HTMLSelectElement;
    for (const image of images) {
      const option = this.doc.createElement("option");
      option.value = String(image.id);
      option.textContent = `${image.id}: ${image.file_name}`;
      picker.appendChild(option);
    }
    picker.addEventListener("change", () => void this.loadImage(Number(picker.value)));
    if (images.length > 0) {
      await this.loadImage(images[0].id);
    }
    await this.refreshProjection();
    await this.refreshHistory();
    setInterval(() => void this.pollSession(), 4000);
  }

  async loadImage(imageId: number): Promise<void> {
    const images = await this.api.images();
    const image = images.find((entry) => entry.id === imageId);
    if (!image) return;
    this.currentImage = image;
    const instances = await this.api.instancesOf(imageId);
    const host = this.el("editor");
    host.replaceChildren();
    this.editor = renderEditor(this.doc, image, instances, {
      onVertexDrag: (instanceId, index, x, y) => void this.commitDrag(instanceId, index, x, y),
      onSelectInstance: (instanceId) => void this.showInstance(instanceId),
    });
    host.appendChild(this.editor.root);
  }

  private async commitDrag(instanceId: number, index: number, x: number, y: number): Promise<void> {
    try {
      await this.api.moveVertex(instanceId, index, x, y);
      this.status(`moved vertex ${index} of #${instanceId}`);
    } catch (error) {
      this.status(
        error instanceof ApiError ? `edit rejected: ${error.message}` : String(error),
      );
    }
    // server is authoritative either way: re-render the whole overlay
    if (this.currentImage) {
      const instances = await this.api.instancesOf(this.currentImage.id);
      this.editor?.update(instances);
    }
  }

  private async segmentCurrent(): Promise<void> {
    if (!this.currentImage) return;
    try {
      const result = await this.api.segment(this.currentImage.id);
      this.status(`backend returned ${result.instances.length} predictions`);
      await this.loadImage(this.currentImage.id);
    } catch (error) {
      this.status(error instanceof ApiError ? error.message : String(error));
    }
  }

  async showInstance(instanceId: number): Promise<void> {
    const features = await this.api.features(instanceId);
    const stats = await this.api.classStats();
    const spec = buildGlyphSpec(features, stats.classes[features.class]);
    const zoom = this.el("glyph");
    zoom.replaceChildren(
      renderGlyph(this.doc, spec, 200, {
        onLegendClick: (next) => {
          void this.api
            .setLabel(instanceId, next)
            .then(() => this.showInstance(instanceId))
            .then(() => this.refreshProjection());
        },
      }),
    );

    const neighbors = await this.api.similar(instanceId);
    const host = this.el("similar");
    host.replaceChildren(
      renderSimilarityList(this.doc, neighbors, async (neighborId) => {
        const nf = await this.api.features(neighborId);
        return renderGlyph(this.doc, buildGlyphSpec(nf, stats.classes[nf.class]), 90);
      }),
    );
  }

  private renderProjection(payload: ProjectionPayload): void {
    this.lastProjectionRevision = payload.projection_revision;
    const host = this.el("scatter");
    host.replaceChildren(
      renderScatterplot(this.doc, payload, {
        onSelect: (instanceId) => void this.showInstance(instanceId),
        onBrush: (ids) => {
          this.brushed = ids;
          this.status(`brushed ${ids.length} samples`);
        },
      }),
    );
  }

  async refreshProjection(): Promise<void> {
    try {
      this.renderProjection(await this.api.projection());
      this.el("stale-banner").hidden = true;
    } catch (error) {
      if (error instanceof ApiError && error.code === "projection_not_fitted") {
        this.status("projection not fitted yet");
      } else {
        throw error;
      }
    }
  }

  async refit(): Promise<void> {
    await this.api.refitProjection();
    await this.refreshProjection();
    this.status("projection refitted");
  }

  private async selectBrushed(): Promise<void> {
    let done = 0;
    for (const instanceId of this.brushed) {
      try {
        await this.api.setSelected(instanceId, true);
        done += 1;
      } catch {
        // model-sourced instances cannot be selected; skip them
      }
    }
    this.status(`selected ${done} of ${this.brushed.length} brushed samples`);
    await this.refreshProjection();
  }

  private async train(): Promise<void> {
    const payload = await this.api.projection();
    const ids = payload.points.filter((p) => p.selected).map((p) => p.instance_id);
    if (ids.length === 0) {
      this.status("nothing selected for training");
      return;
    }
    try {
      const result = await this.api.train(ids);
      this.status(`round ${result.round.round}: ${result.round.status}`);
      await this.refreshHistory();
    } catch (error) {
      this.status(error instanceof ApiError ? error.message : String(error));
    }
  }

  async refreshHistory(): Promise<void> {
    const history = await this.api.history();
    const session = await this.api.session();
    const host = this.el("evalchart");
    host.replaceChildren(
      renderEvalChart(this.doc, history, { pendingRound: session.running_round }),
    );
  }

  private async pollSession(): Promise<void> {
    const session = await this.api.session();
    if (
      this.lastProjectionRevision !== null &&
      session.projection_revision !== this.lastProjectionRevision
    ) {
      this.el("stale-banner").hidden = false;
    }
    if (session.running_round !== null) {
      await this.api.round(session.running_round);
      await this.refreshHistory();
    }
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  const app = new App(document);
  window.addEventListener("DOMContentLoaded", () => void app.start());
}
