/** Exact ray/voxel picking. Voxel (i, j, k) of an R-grid occupies the axis
 * aligned cube [i/R, (i+1)/R) x ... in normalized shape space; the picker
 * returns the active voxel with the smallest positive ray parameter. */

export type Vec3 = [number, number, number];

export interface PickResult {
  voxel: [number, number, number];
  t: number;
}

/** Slab test: entry/exit parameters of a ray against one axis-aligned box. */
export function rayBoxInterval(
  origin: Vec3,
  dir: Vec3,
  lo: Vec3,
  hi: Vec3
): [number, number] | null {
  let tmin = -Infinity;
  let tmax = Infinity;
  for (let a = 0; a < 3; a++) {
    if (Math.abs(dir[a]) < 1e-12) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return null;
      continue;
    }
    const inv = 1.0 / dir[a];
    let t0 = (lo[a] - origin[a]) * inv;
    let t1 = (hi[a] - origin[a]) * inv;
    if (t0 > t1) [t0, t1] = [t1, t0];
    tmin = Math.max(tmin, t0);
    tmax = Math.min(tmax, t1);
    if (tmin > tmax) return null;
  }
  return [tmin, tmax];
}

export function pickVoxel(
  origin: Vec3,
  dir: Vec3,
  coords: [number, number, number][],
  resolution: number
): PickResult | null {
  let best: PickResult | null = null;
  const s = 1.0 / resolution;
  for (const c of coords) {
    const lo: Vec3 = [c[0] * s, c[1] * s, c[2] * s];
    const hi: Vec3 = [lo[0] + s, lo[1] + s, lo[2] + s];
    const hit = rayBoxInterval(origin, dir, lo, hi);
    if (!hit) continue;
    const [tmin, tmax] = hit;
    if (tmax < 0) continue; // box entirely behind the ray
    const t = tmin >= 0 ? tmin : 0;
    if (!best || t < best.t) {
      best = { voxel: [c[0], c[1], c[2]], t };
    }
  }
  return best;
}
