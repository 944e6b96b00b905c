import type {
  ClassStatsPayload,
  FeaturePayload,
  HistoryEntry,
  ImageMeta,
  InstancePayload,
  NeighborEntry,
  ProjectionPayload,
  SessionPayload,
  ToothClass,
  TrainingRoundPayload,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: unknown = undefined,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

/**
 * Thin typed client over the workbench endpoints. The UI holds no
 * authoritative state: every view re-renders from these responses.
 */
export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(
        response.status,
        (body as { code?: string }).code ?? "unknown_error",
        (body as { message?: string }).message ?? response.statusText,
        (body as { details?: unknown }).details,
      );
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  session(): Promise<SessionPayload> {
    return this.request("/api/session");
  }

  async images(): Promise<ImageMeta[]> {
    const payload = await this.request<{ images: ImageMeta[] }>("/api/images");
    return payload.images;
  }

  async instancesOf(imageId: number): Promise<InstancePayload[]> {
    const payload = await this.request<{ instances: InstancePayload[] }>(
      `/api/images/${imageId}/instances`,
    );
    return payload.instances;
  }

  segment(imageId: number): Promise<{ revision: number; instances: InstancePayload[] }> {
    return this.post(`/api/images/${imageId}/segment`, {});
  }

  features(instanceId: number): Promise<FeaturePayload> {
    return this.request(`/api/instances/${instanceId}/features`);
  }

  async similar(instanceId: number, k?: number): Promise<NeighborEntry[]> {
    const suffix = k === undefined ? "" : `?k=${k}`;
    const payload = await this.request<{ neighbors: NeighborEntry[] }>(
      `/api/instances/${instanceId}/similar${suffix}`,
    );
    return payload.neighbors;
  }

  moveVertex(
    instanceId: number,
    index: number,
    x: number,
    y: number,
  ): Promise<{ revision: number; instance: InstancePayload }> {
    return this.post(`/api/instances/${instanceId}/contour`, {
      moves: [{ index, x, y }],
    });
  }

  setLabel(
    instanceId: number,
    toothClass: ToothClass,
  ): Promise<{ revision: number; instance: InstancePayload }> {
    return this.post(`/api/instances/${instanceId}/label`, { class: toothClass });
  }

  setSelected(
    instanceId: number,
    flag: boolean,
  ): Promise<{ revision: number; instance: InstancePayload }> {
    return this.post(`/api/instances/${instanceId}/select`, { flag });
  }

  projection(): Promise<ProjectionPayload> {
    return this.request("/api/projection");
  }

  refitProjection(): Promise<{ revision: number; projection_revision: number }> {
    return this.post("/api/projection/refit", {});
  }

  classStats(): Promise<ClassStatsPayload> {
    return this.request<{ stats: ClassStatsPayload }>("/api/classstats").then(
      (payload) => payload.stats,
    );
  }

  train(sampleIds: number[]): Promise<{ revision: number; round: TrainingRoundPayload }> {
    return this.post("/api/train", { sample_ids: sampleIds });
  }

  round(number: number): Promise<{ round: TrainingRoundPayload }> {
    return this.request(`/api/train/${number}`);
  }

  async history(): Promise<HistoryEntry[]> {
    const payload = await this.request<{ history: HistoryEntry[] }>("/api/eval/history");
    return payload.history;
  }
}
