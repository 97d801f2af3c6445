/** Float ink rasters and the stamping / resampling kernels.
 *
 * Every formula here is a transliteration of the service's own raster
 * pipeline.  The client rasterizes strokes locally for two reasons: the
 * live canvas must show exactly what the service will receive, and the
 * request payload must be reproducible byte-for-byte from the stroke list
 * (that is what makes undo/redo round trips verifiable).  Keeping the
 * arithmetic identical — same window bounds, same capsule distance, same
 * bilinear corner weights — is therefore a correctness requirement, not a
 * style choice.
 */

import { Box, boxToCanvas, dilated, invertAffine } from "./geometry.js";

export const CANVAS_SIZE = 256;
export const CROP_RESOLUTION = 64;
export const BOX_DILATION = 0.08;

/** Square float ink raster, values in [0, 1], row-major. */
export class Ink {
  readonly size: number;
  readonly data: Float64Array;

  constructor(size: number = CANVAS_SIZE, data?: Float64Array) {
    this.size = size;
    if (data !== undefined) {
      if (data.length !== size * size) {
        throw new Error(`ink buffer length ${data.length} != ${size}*${size}`);
      }
      this.data = data;
    } else {
      this.data = new Float64Array(size * size);
    }
  }

  clone(): Ink {
    return new Ink(this.size, this.data.slice());
  }
}

/**
 * Stamp one stroke segment as a soft capsule.
 *
 * A pixel at distance `dist` from the segment (Euclidean distance to the
 * closed segment, not the infinite line) receives ink
 * `clip(reach - dist, 0, 1)` where `reach = width / 2 + 0.5`, blended into
 * the accumulator with per-pixel max.  Only the window
 * `[min - pad, max + pad]` around the endpoints is visited,
 * `pad = reach + 1`, with the same floor/ceil bounds the service uses.
 */
export function stampSegment(
  ink: Ink,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  width: number,
): void {
  const size = ink.size;
  const reach = width / 2 + 0.5;
  const pad = reach + 1;
  const xLo = Math.max(0, Math.floor(Math.min(x0, x1) - pad));
  const xHi = Math.min(size, Math.ceil(Math.max(x0, x1) + pad) + 1);
  const yLo = Math.max(0, Math.floor(Math.min(y0, y1) - pad));
  const yHi = Math.min(size, Math.ceil(Math.max(y0, y1) + pad) + 1);
  if (xLo >= xHi || yLo >= yHi) {
    return;
  }

  const dx = x1 - x0;
  const dy = y1 - y0;
  const length = Math.hypot(dx, dy);
  const degenerate = length < 1e-9;
  const ux = degenerate ? 0 : dx / length;
  const uy = degenerate ? 0 : dy / length;

  const data = ink.data;
  for (let y = yLo; y < yHi; y++) {
    const row = y * size;
    for (let x = xLo; x < xHi; x++) {
      let dist: number;
      if (degenerate) {
        dist = Math.hypot(x - x0, y - y0);
      } else {
        const rx = x - x0;
        const ry = y - y0;
        const axial = rx * ux + ry * uy;
        const perp = -rx * uy + ry * ux;
        const over = Math.max(0, Math.max(-axial, axial - length));
        dist = Math.hypot(perp, over);
      }
      const value = Math.min(Math.max(reach - dist, 0), 1);
      if (value > data[row + x]!) {
        data[row + x] = value;
      }
    }
  }
}

/** Stamp a full polyline: consecutive point pairs as capsule segments. */
export function stampPolyline(
  ink: Ink,
  points: ReadonlyArray<readonly [number, number]>,
  width: number,
): void {
  if (points.length < 2) {
    throw new Error("polyline needs at least two points");
  }
  for (let i = 0; i + 1 < points.length; i++) {
    const [ax, ay] = points[i]!;
    const [bx, by] = points[i + 1]!;
    stampSegment(ink, ax, ay, bx, by, width);
  }
}

/**
 * Tight integer bounds of positive ink, or null for a blank raster.
 * Width/height follow the inclusive-pixel convention (max - min + 1).
 */
export function supportBounds(ink: Ink): Box | null {
  const size = ink.size;
  const data = ink.data;
  let xMin = size;
  let xMax = -1;
  let yMin = size;
  let yMax = -1;
  for (let y = 0; y < size; y++) {
    const row = y * size;
    for (let x = 0; x < size; x++) {
      if (data[row + x]! > 0) {
        if (x < xMin) xMin = x;
        if (x > xMax) xMax = x;
        if (y < yMin) yMin = y;
        if (y > yMax) yMax = y;
      }
    }
  }
  if (xMax < 0) {
    return null;
  }
  return { x: xMin, y: yMin, w: xMax - xMin + 1, h: yMax - yMin + 1 };
}

/** Tight support bounds grown by the shared 8% dilation. */
export function partBox(ink: Ink): Box | null {
  const tight = supportBounds(ink);
  return tight === null ? null : dilated(tight, BOX_DILATION);
}

function bilinearAt(
  data: Float64Array,
  width: number,
  height: number,
  xs: number,
  ys: number,
  fill: number,
): number {
  const x0 = Math.floor(xs);
  const y0 = Math.floor(ys);
  const fx = xs - x0;
  const fy = ys - y0;
  const x1 = x0 + 1;
  const y1 = y0 + 1;
  const read = (xi: number, yi: number): number =>
    xi >= 0 && xi < width && yi >= 0 && yi < height
      ? data[yi * width + xi]!
      : fill;
  return (
    read(x0, y0) * (1 - fx) * (1 - fy) +
    read(x1, y0) * fx * (1 - fy) +
    read(x0, y1) * (1 - fx) * fy +
    read(x1, y1) * fx * fy
  );
}

/**
 * Resample the box region of a canvas into a `resolution` square crop by
 * backward bilinear sampling, clipped into [0, 1].
 */
export function resampleCrop(
  ink: Ink,
  box: Box,
  resolution: number = CROP_RESOLUTION,
): Float64Array {
  const t = boxToCanvas(box, resolution);
  const out = new Float64Array(resolution * resolution);
  for (let i = 0; i < resolution; i++) {
    const ys = t.d * i + t.ty;
    for (let j = 0; j < resolution; j++) {
      const xs = t.a * j + t.tx;
      const v = bilinearAt(ink.data, ink.size, ink.size, xs, ys, 0);
      out[i * resolution + j] = Math.min(Math.max(v, 0), 1);
    }
  }
  return out;
}

/**
 * Paste a square crop back into its box with per-pixel max, sampling the
 * crop bilinearly; canvas pixels whose preimage falls outside the crop's
 * half-pixel frame are untouched.
 */
export function pasteCropMax(
  canvas: Ink,
  crop: Float64Array,
  resolution: number,
  box: Box,
): void {
  const size = canvas.size;
  const xLo = Math.max(0, Math.floor(box.x - 1));
  const yLo = Math.max(0, Math.floor(box.y - 1));
  const xHi = Math.min(size, Math.ceil(box.x + box.w + 1) + 1);
  const yHi = Math.min(size, Math.ceil(box.y + box.h + 1) + 1);
  if (xLo >= xHi || yLo >= yHi) {
    return;
  }
  const inv = invertAffine(boxToCanvas(box, resolution));
  const data = canvas.data;
  for (let y = yLo; y < yHi; y++) {
    const row = y * size;
    for (let x = xLo; x < xHi; x++) {
      const cx = inv.a * x + inv.b * y + inv.tx;
      const cy = inv.c * x + inv.d * y + inv.ty;
      const inside =
        cx >= -0.5 &&
        cx <= resolution - 0.5 &&
        cy >= -0.5 &&
        cy <= resolution - 0.5;
      if (!inside) {
        continue;
      }
      const v = bilinearAt(crop, resolution, resolution, cx, cy, 0);
      if (v > data[row + x]!) {
        data[row + x] = v;
      }
    }
  }
}

/** Per-pixel max of several same-size rasters. */
export function maxComposite(inks: ReadonlyArray<Ink>): Ink {
  if (inks.length === 0) {
    return new Ink();
  }
  const size = inks[0]!.size;
  const out = new Ink(size);
  for (const ink of inks) {
    if (ink.size !== size) {
      throw new Error("composite of mismatched raster sizes");
    }
    for (let i = 0; i < out.data.length; i++) {
      if (ink.data[i]! > out.data[i]!) {
        out.data[i] = ink.data[i]!;
      }
    }
  }
  return out;
}
