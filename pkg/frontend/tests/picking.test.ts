import { describe, expect, it } from "vitest";

import { pickVoxel, rayBoxInterval, type Vec3 } from "../src/picking";

describe("rayBoxInterval", () => {
  it("hits a unit box straight on", () => {
    const hit = rayBoxInterval([-1, 0.5, 0.5], [1, 0, 0], [0, 0, 0], [1, 1, 1]);
    expect(hit).not.toBeNull();
    const [tmin, tmax] = hit!;
    expect(tmin).toBeCloseTo(1);
    expect(tmax).toBeCloseTo(2);
  });

  it("misses a box off to the side", () => {
    expect(rayBoxInterval([-1, 2, 0.5], [1, 0, 0], [0, 0, 0], [1, 1, 1])).toBeNull();
  });

  it("handles axis-parallel rays inside the slab", () => {
    expect(rayBoxInterval([0.5, 0.5, -1], [0, 0, 1], [0, 0, 0], [1, 1, 1])).not.toBeNull();
    expect(rayBoxInterval([2, 0.5, -1], [0, 0, 1], [0, 0, 0], [1, 1, 1])).toBeNull();
  });
});

describe("pickVoxel", () => {
  const coords: [number, number, number][] = [
    [2, 4, 4],
    [6, 4, 4],
  ];

  it("returns the nearer voxel along the ray", () => {
    const origin: Vec3 = [-1, 4.5 / 8, 4.5 / 8];
    const hit = pickVoxel(origin, [1, 0, 0], coords, 8);
    expect(hit).not.toBeNull();
    expect(hit!.voxel).toEqual([2, 4, 4]);
  });

  it("from the other side the other voxel is nearer", () => {
    const origin: Vec3 = [2, 4.5 / 8, 4.5 / 8];
    const hit = pickVoxel(origin, [-1, 0, 0], coords, 8);
    expect(hit!.voxel).toEqual([6, 4, 4]);
  });

  it("returns null on a miss", () => {
    expect(pickVoxel([-1, 0.99, 0.99], [1, 0, 0], coords, 8)).toBeNull();
  });

  it("ignores voxels entirely behind the origin", () => {
    const hit = pickVoxel([4.5 / 8, 4.5 / 8, 4.5 / 8], [1, 0, 0], coords, 8);
    expect(hit!.voxel).toEqual([6, 4, 4]);
  });
});
