/** Axis-aligned boxes and the box<->crop coordinate mapping.
 *
 * The arithmetic here must coincide with the service's ingestion math to
 * the last bit: the box we send alongside each crop is the box the service
 * uses to paste refined crops back onto the canvas, so any disagreement
 * shows up as a sub-pixel shift in the round trip.
 */

export interface Box {
  readonly x: number;
  readonly y: number;
  readonly w: number;
  readonly h: number;
}

/** Grow a box about its center by `fraction` of its size per axis. */
export function dilated(box: Box, fraction: number): Box {
  const dw = box.w * fraction;
  const dh = box.h * fraction;
  return {
    x: box.x - 0.5 * dw,
    y: box.y - 0.5 * dh,
    w: box.w + dw,
    h: box.h + dh,
  };
}

/** Affine map (row-major 2x3) taking crop pixel centers to canvas coords. */
export interface Affine2x3 {
  readonly a: number;
  readonly b: number;
  readonly tx: number;
  readonly c: number;
  readonly d: number;
  readonly ty: number;
}

/**
 * Map from a `resolution`-wide crop grid into `box` on the canvas.
 *
 * Crop pixel (j, i) has center (j + 0.5, i + 0.5) in crop units; the map
 * sends it to the matching point of the box, so crop pixel j lands at
 * canvas x = box.x + (j + 0.5) * box.w / resolution - 0.5 (and likewise
 * for y).  Written in a*j + tx form for direct reuse in sampling loops.
 */
export function boxToCanvas(box: Box, resolution: number): Affine2x3 {
  const sx = box.w / resolution;
  const sy = box.h / resolution;
  return {
    a: sx,
    b: 0,
    tx: box.x + 0.5 * sx - 0.5,
    c: 0,
    d: sy,
    ty: box.y + 0.5 * sy - 0.5,
  };
}

/** Invert an affine 2x3 map. */
export function invertAffine(t: Affine2x3): Affine2x3 {
  const det = t.a * t.d - t.b * t.c;
  if (det === 0) {
    throw new Error("affine map is singular");
  }
  const ia = t.d / det;
  const ib = -t.b / det;
  const ic = -t.c / det;
  const id = t.a / det;
  return {
    a: ia,
    b: ib,
    tx: -(ia * t.tx + ib * t.ty),
    c: ic,
    d: id,
    ty: -(ic * t.tx + id * t.ty),
  };
}
