import { describe, expect, it } from "vitest";

import { colorBuffer, displacementColor } from "../src/color.js";

describe("displacement coloring", () => {
  it("zero displacement keeps the base gray", () => {
    expect(displacementColor(0, 1)).toEqual([0.78, 0.78, 0.8]);
  });

  it("peak displacement is the deep blue", () => {
    const [r, g, b] = displacementColor(1, 1);
    expect(r).toBeCloseTo(0.05, 12);
    expect(g).toBeCloseTo(0.25, 12);
    expect(b).toBeCloseTo(1.0, 12);
  });

  it("degenerate max falls back to base everywhere", () => {
    expect(displacementColor(0.5, 0)).toEqual([0.78, 0.78, 0.8]);
  });

  it("builds a packed float buffer", () => {
    const buf = colorBuffer([0, 1], 2);
    expect(buf).toHaveLength(6);
    expect(buf[3]).toBeCloseTo(0.05);
    expect(buf[5]).toBeCloseTo(1.0);
  });

  it("interpolates monotonically in blue", () => {
    const lo = displacementColor(0.2, 1)[2];
    const hi = displacementColor(0.8, 1)[2];
    expect(hi).toBeGreaterThan(lo);
  });
});
