/** Stroke session -> service request payload.
 *
 * Grouping, box, and crop math all mirror the service's own ingestion, so
 * the crop the service decodes is the crop the user saw on the canvas.
 * Part order is fixed (palette order) and JSON key order is fixed by
 * construction, which makes `serializePayload` byte-stable: equal sessions
 * produce equal request bodies, byte for byte.
 */

import { PartToken, PART_TOKENS } from "./labels.js";
import { PartPayload, RefinePayload } from "./protocol.js";
import {
  CANVAS_SIZE,
  CROP_RESOLUTION,
  Ink,
  partBox,
  pasteCropMax,
  resampleCrop,
  stampPolyline,
} from "./raster.js";
import { encodeGrayPng, inkToGrayBytes, toBase64 } from "./png.js";
import { SessionState, StrokeRecord } from "./session.js";
import { Box } from "./geometry.js";

export class EmptySession extends Error {}

/** Rasterize strokes into one full-resolution ink layer per used label. */
export function rasterizeParts(
  strokes: ReadonlyArray<StrokeRecord>,
): Map<PartToken, Ink> {
  const layers = new Map<PartToken, Ink>();
  for (const token of PART_TOKENS) {
    const own = strokes.filter((s) => s.label === token);
    if (own.length === 0) {
      continue;
    }
    const ink = new Ink(CANVAS_SIZE);
    for (const stroke of own) {
      stampPolyline(ink, stroke.points, stroke.width);
    }
    layers.set(token, ink);
  }
  return layers;
}

export interface RasterizedPart {
  readonly label: PartToken;
  readonly box: Box;
  readonly crop: Float64Array;
  readonly ink: Ink;
}

/**
 * Per-part boxes and crops for every label with visible ink.  Labels whose
 * strokes left no positive pixel (possible only with sub-pixel brushes) are
 * dropped — there is no box to send for them.
 */
export function rasterizeSession(
  strokes: ReadonlyArray<StrokeRecord>,
): RasterizedPart[] {
  const out: RasterizedPart[] = [];
  for (const [label, ink] of rasterizeParts(strokes)) {
    const box = partBox(ink);
    if (box === null) {
      continue;
    }
    out.push({ label, box, crop: resampleCrop(ink, box, CROP_RESOLUTION), ink });
  }
  return out;
}

function partToPayload(part: RasterizedPart): PartPayload {
  const png = encodeGrayPng(
    inkToGrayBytes(part.crop),
    CROP_RESOLUTION,
    CROP_RESOLUTION,
  );
  // Key order is the wire order; keep it fixed so serialization is stable.
  return {
    label: part.label,
    crop_png: toBase64(png),
    box: { x: part.box.x, y: part.box.y, w: part.box.w, h: part.box.h },
  };
}

/** Build the full /refine request body for the current session. */
export function buildRefinePayload(state: SessionState): RefinePayload {
  const parts = rasterizeSession(state.strokes).map(partToPayload);
  if (parts.length === 0) {
    throw new EmptySession("the session has no visible strokes to submit");
  }
  return {
    parts,
    k: state.options.k,
    steps: state.options.steps,
    skip_projection: state.options.skipProjection,
    skip_transformation: state.options.skipTransformation,
  };
}

/** Canonical request bytes; two equal sessions serialize identically. */
export function serializePayload(payload: RefinePayload): string {
  return JSON.stringify(payload);
}

/**
 * Reassemble a full canvas from per-part crops by max-paste — the exact
 * inverse the service applies when both refinement stages are skipped.
 * Used for the local A/B panel and for verifying ablation identity.
 */
export function assembleFromParts(
  parts: ReadonlyArray<{ readonly box: Box; readonly crop: Float64Array }>,
  resolution: number = CROP_RESOLUTION,
): Ink {
  const canvas = new Ink(CANVAS_SIZE);
  for (const part of parts) {
    pasteCropMax(canvas, part.crop, resolution, part.box);
  }
  return canvas;
}
