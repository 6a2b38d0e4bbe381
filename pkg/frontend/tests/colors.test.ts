import { describe, expect, it } from "vitest";

import { labelColor, modelToDisplay } from "../src/colors";

describe("modelToDisplay", () => {
  it("maps [-1, 1] onto [0, 1]", () => {
    expect(modelToDisplay([-1, -1, -1])).toEqual([0, 0, 0]);
    expect(modelToDisplay([1, 1, 1])).toEqual([1, 1, 1]);
    expect(modelToDisplay([0, 0, 0])).toEqual([0.5, 0.5, 0.5]);
  });
});

describe("labelColor", () => {
  it("produces distinct in-range colors for the first ten labels", () => {
    const seen = new Set<string>();
    for (let label = 0; label < 10; label++) {
      const [r, g, b] = labelColor(label);
      for (const v of [r, g, b]) {
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThanOrEqual(1);
      }
      seen.add([r, g, b].map((v) => v.toFixed(3)).join(","));
    }
    expect(seen.size).toBe(10);
  });
});
