import { describe, expect, it } from "vitest";

import { buildSeriesPath, renderEvalChart } from "../src/evalchart";
import { buildGlyphSpec, renderGlyph } from "../src/glyph";
import { DEVIATION_COLORS } from "../src/palette";
import { computeExtent, makeScales, renderScatterplot } from "../src/scatterplot";
import type {
  DeviationFlag,
  FeaturePayload,
  ProjectionPayload,
} from "../src/types";

function featurePayload(flags: DeviationFlag[]): FeaturePayload {
  return {
    revision: 1,
    instance_id: 7,
    class: "canine",
    vector: {
      values: [0.7, 2.0, 3.1, 3.8, 7.2, 4.8, -8.5, 12.0, 30.0, 5.0],
      dimensions: ["hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle"],
      degenerate_angle: false,
    },
    deviation: { flags, unusable_class: false },
  };
}

function projectionPayload(): ProjectionPayload {
  return {
    revision: 3,
    projection_revision: 3,
    points: [
      { instance_id: 1, image_id: 1, class: "incisor", x: 0, y: 0, marker: "train", source: "ground_truth", selected: false },
      { instance_id: 2, image_id: 1, class: "canine", x: 1, y: 1, marker: "new", source: "model", selected: false },
      { instance_id: 3, image_id: 1, class: "molar1", x: -1, y: 2, marker: "expert", source: "corrected", selected: true },
    ],
    class_means: {},
  };
}

describe("glyph", () => {
  it("colors are a pure function of the deviation flags", () => {
    const flags: DeviationFlag[] = [
      "above", "below", "near", "near", "above", "below", "near", "above", "below", "near",
    ];
    const spec = buildGlyphSpec(featurePayload(flags));
    expect(spec.elements).toHaveLength(10);
    spec.elements.forEach((element, i) => {
      expect(element.color).toBe(DEVIATION_COLORS[flags[i]]);
    });
    expect(spec.elements.slice(0, 7).every((e) => e.kind === "bar")).toBe(true);
    expect(spec.elements.slice(7).every((e) => e.kind === "dial")).toBe(true);
  });

  it("renders seven bars and three dials with the flag colors", () => {
    const flags: DeviationFlag[] = [
      "above", "above", "below", "near", "near", "near", "below", "above", "near", "below",
    ];
    const svg = renderGlyph(document, buildGlyphSpec(featurePayload(flags)));
    const bars = svg.querySelectorAll(".glyph-bar");
    expect(bars).toHaveLength(7);
    bars.forEach((bar, i) => {
      expect(bar.getAttribute("stroke")).toBe(DEVIATION_COLORS[flags[i]]);
    });
    const needles = svg.querySelectorAll(".glyph-needle");
    expect(needles).toHaveLength(3);
    needles.forEach((needle, i) => {
      expect(needle.getAttribute("stroke")).toBe(DEVIATION_COLORS[flags[7 + i]]);
    });
  });

  it("legend click emits the next class for a set_label request", () => {
    let emitted: string | null = null;
    const svg = renderGlyph(
      document,
      buildGlyphSpec(featurePayload(Array(10).fill("near") as DeviationFlag[])),
      160,
      { onLegendClick: (next) => (emitted = next) },
    );
    const legend = svg.querySelector(".glyph-legend")!;
    legend.dispatchEvent(new window.MouseEvent("click"));
    expect(emitted).toBe("molar1"); // canine -> molar1 in the fixed cycle
  });

  it("dial range auto-scales to the class band", () => {
    const payload = featurePayload(Array(10).fill("near") as DeviationFlag[]);
    const stats = {
      count: 10,
      mean: payload.vector.values.slice(),
      std: Array(10).fill(1),
      usable: true,
    };
    const spec = buildGlyphSpec(payload, stats);
    // value equals the mean, so it sits mid-band
    spec.elements.forEach((element) => expect(element.normalized).toBeCloseTo(0.5, 9));
  });
});

describe("scatterplot", () => {
  it("renders each marker kind with its legend shape", () => {
    const svg = renderScatterplot(document, projectionPayload());
    const train = svg.querySelector('[data-marker="train"]')!;
    expect(train.tagName.toLowerCase()).toBe("circle");
    expect(train.getAttribute("stroke")).toBe("none");
    const fresh = svg.querySelector('[data-marker="new"]')!;
    expect(fresh.tagName.toLowerCase()).toBe("circle");
    expect(fresh.getAttribute("stroke")).toBe("#000000");
    const expert = svg.querySelector('[data-marker="expert"]')!;
    expect(expert.tagName.toLowerCase()).toBe("path");
    expect(expert.getAttribute("d")).toContain("M");
  });

  it("click on a point reports its instance id", () => {
    let picked: number | null = null;
    const svg = renderScatterplot(document, projectionPayload(), {
      onSelect: (id) => (picked = id),
    });
    svg.querySelector('[data-instance-id="2"]')!.dispatchEvent(
      new window.MouseEvent("click"),
    );
    expect(picked).toBe(2);
  });

  it("scales map the extent onto the padded frame", () => {
    const extent = computeExtent(projectionPayload().points);
    const { sx, sy } = makeScales(extent, 400, 300, 20);
    expect(sx(extent.minX)).toBe(20);
    expect(sx(extent.maxX)).toBe(380);
    expect(sy(extent.minY)).toBe(280);
    expect(sy(extent.maxY)).toBe(20);
  });

  it("empty dataset renders an empty frame without crashing", () => {
    const svg = renderScatterplot(document, {
      revision: 0,
      projection_revision: 0,
      points: [],
      class_means: {},
    });
    expect(svg.querySelectorAll(".scatter-point")).toHaveLength(0);
  });
});

describe("evaluation chart", () => {
  it("failed rounds leave a gap, not a zero", () => {
    const sy = (v: number) => 100 - v;
    const path = buildSeriesPath([75, null, 80], [0, 50, 100], sy);
    expect(path).toBe("M 0 25 M 100 20");
  });

  it("renders one x tick per round and a monotone series", () => {
    const history = [0, 1, 2, 3].map((round) => ({
      round,
      iou: 75 + round,
      precision: 80,
      recall: 80,
      f1: 80,
    }));
    const svg = renderEvalChart(document, history);
    expect(svg.querySelectorAll(".round-tick")).toHaveLength(4);
    const iouPath = svg.querySelector(".series-iou")!.getAttribute("d")!;
    const ys = [...iouPath.matchAll(/[ML] [\d.]+ ([\d.]+)/g)].map((m) => Number(m[1]));
    expect(ys).toHaveLength(4);
    for (let i = 1; i < ys.length; i++) {
      expect(ys[i]).toBeLessThan(ys[i - 1]); // higher iou plots higher (smaller y)
    }
  });

  it("single entry still renders and pending rounds get a marker", () => {
    const svg = renderEvalChart(
      document,
      [{ round: 0, iou: 75, precision: 80, recall: 80, f1: 80 }],
      { pendingRound: 1 },
    );
    expect(svg.querySelectorAll(".round-tick")).toHaveLength(2);
    expect(svg.querySelector(".pending-marker")).not.toBeNull();
  });
});
