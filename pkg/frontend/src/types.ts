export type ToothClass = "incisor" | "canine" | "molar1" | "molar2" | "molar3";

export type DeviationFlag = "below" | "near" | "above";

/** train = annotated pool, new = model output this session, expert = selected for training */
export type MarkerKind = "train" | "new" | "expert";

export interface ImageMeta {
  id: number;
  file_name: string;
  width: number;
  height: number;
  contrast: number;
}

export interface InstancePayload {
  id: number;
  image_id: number;
  class: ToothClass;
  polygon: number[]; // flat x,y list
  source: "ground_truth" | "model" | "corrected";
  confidence: number | null;
  selected: boolean;
  created_round: number;
}

export interface FeatureVectorPayload {
  values: number[]; // [hu1..hu7, dx, dy, angle]
  dimensions: string[];
  degenerate_angle: boolean;
}

export interface DeviationPayload {
  flags: DeviationFlag[];
  unusable_class: boolean;
}

export interface FeaturePayload {
  revision: number;
  instance_id: number;
  class: ToothClass;
  vector: FeatureVectorPayload;
  deviation: DeviationPayload;
}

export interface ProjectionPoint {
  instance_id: number;
  image_id: number;
  class: ToothClass;
  x: number;
  y: number;
  marker: MarkerKind;
  source: string;
  selected: boolean;
}

export interface ProjectionPayload {
  revision: number;
  projection_revision: number;
  points: ProjectionPoint[];
  class_means: Record<string, number[]>;
}

export interface NeighborEntry {
  instance_id: number;
  distance: number;
  image_id: number;
  class: ToothClass;
  bbox: number[]; // [x0, y0, x1, y1]
}

export interface HistoryEntry {
  round: number;
  iou: number;
  precision: number;
  recall: number;
  f1: number;
}

export interface ClassStatsEntry {
  count: number;
  mean: number[];
  std: number[];
  usable: boolean;
}

export interface ClassStatsPayload {
  dimensions: string[];
  classes: Record<string, ClassStatsEntry>;
}

export interface SessionPayload {
  revision: number;
  projection_revision: number | null;
  running_round: number | null;
}

export interface TrainingRoundPayload {
  round: number;
  sample_ids: number[];
  status: "submitted" | "running" | "done" | "failed";
  metrics: { iou: number; precision: number; recall: number; f1: number } | null;
  job_id: string | null;
}
