import type { DeviationFlag, ToothClass } from "./types";

/** Five distinguishable hues, one per tooth class. */
export const CLASS_COLORS: Record<ToothClass, string> = {
  incisor: "#4e79a7",
  canine: "#f2b705",
  molar1: "#e15759",
  molar2: "#59a14f",
  molar3: "#b07aa1",
};

/** Deviation encoding: above average = blue, below = red, near = gray. */
export const DEVIATION_COLORS: Record<DeviationFlag, string> = {
  above: "#2e6fd8",
  below: "#d84b3a",
  near: "#9c9c9c",
};

export const TOOTH_CLASSES: ToothClass[] = [
  "incisor",
  "canine",
  "molar1",
  "molar2",
  "molar3",
];
