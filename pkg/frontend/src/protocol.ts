/** Wire types for the refinement service HTTP API.
 *
 * Field names are snake_case because they mirror the JSON bodies exactly;
 * the client passes responses through untouched so a payload captured from
 * the network tab matches what the UI rendered.
 */

import { PartToken } from "./labels.js";

export interface WireBox {
  readonly x: number;
  readonly y: number;
  readonly w: number;
  readonly h: number;
}

export interface PartPayload {
  readonly label: PartToken;
  readonly crop_png: string;
  readonly box: WireBox;
}

export interface RefinePayload {
  readonly parts: ReadonlyArray<PartPayload>;
  readonly k: number;
  readonly steps: number;
  readonly skip_projection: boolean;
  readonly skip_transformation: boolean;
}

export interface ProjectionReport {
  readonly neighbor_ids: ReadonlyArray<number>;
  readonly weights: ReadonlyArray<number>;
  readonly residual: number;
}

export interface RefineResponse {
  readonly sketch_png: string;
  readonly parsing_png: string;
  readonly preview_png: string;
  readonly step_transforms: ReadonlyArray<Record<string, ReadonlyArray<number>>>;
  readonly total_transforms: Record<string, ReadonlyArray<number>>;
  readonly projections: Record<string, ProjectionReport>;
  readonly energy_trace: ReadonlyArray<number>;
  readonly timings_ms: Record<string, number>;
}

export interface ProjectResponse {
  readonly label: PartToken;
  readonly neighbor_ids: ReadonlyArray<number>;
  readonly weights: ReadonlyArray<number>;
  readonly residual: number;
  readonly crop_png: string;
}

export interface ServiceError {
  readonly code: string;
  readonly message: string;
}

export interface HealthResponse {
  readonly status: string;
  readonly version: string;
}
