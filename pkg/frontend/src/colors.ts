/** Color helpers: model colors live in [-1, 1]; labels get a fixed wheel. */

export type Rgb = [number, number, number];

/** [-1, 1] model color to 0..1 display color. */
export function modelToDisplay(c: Rgb): Rgb {
  return [(c[0] + 1) / 2, (c[1] + 1) / 2, (c[2] + 1) / 2];
}

/** Deterministic, well-spread label colors (golden-angle hue walk). */
export function labelColor(label: number): Rgb {
  const hue = (label * 137.508) % 360;
  return hslToRgb(hue / 360, 0.65, 0.55);
}

export function hslToRgb(h: number, s: number, l: number): Rgb {
  const q = l < 0.5 ? l * (1 + s) : l + s - l * s;
  const p = 2 * l - q;
  const channel = (t: number): number => {
    t = ((t % 1) + 1) % 1;
    if (t < 1 / 6) return p + (q - p) * 6 * t;
    if (t < 1 / 2) return q;
    if (t < 2 / 3) return p + (q - p) * (2 / 3 - t) * 6;
    return p;
  };
  return [channel(h + 1 / 3), channel(h), channel(h - 1 / 3)];
}
