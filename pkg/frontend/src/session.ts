/** Drawing session state: strokes, undo/redo, options, last result.
 *
 * The state is immutable and every mutation goes through a SessionOp, with
 * the op log kept on the state itself.  That gives the session its central
 * guarantee for free: replaying the log from a fresh session reproduces the
 * current state exactly, so anything derived from the state (in particular
 * the request payload bytes) is reproducible from the op history.
 */

import { PartToken, isPartToken, PART_TOKENS } from "./labels.js";
import { RefineResponse } from "./protocol.js";

export class InvalidStroke extends Error {}

export interface StrokeRecord {
  readonly label: PartToken;
  readonly points: ReadonlyArray<readonly [number, number]>;
  readonly width: number;
}

export interface RefineOptions {
  readonly k: number;
  readonly steps: number;
  readonly skipProjection: boolean;
  readonly skipTransformation: boolean;
}

export const DEFAULT_OPTIONS: RefineOptions = {
  k: 10,
  steps: 3,
  skipProjection: false,
  skipTransformation: false,
};

export type SessionOp =
  | { readonly kind: "add_stroke"; readonly stroke: StrokeRecord }
  | { readonly kind: "undo" }
  | { readonly kind: "redo" }
  | { readonly kind: "select_label"; readonly label: PartToken }
  | { readonly kind: "set_options"; readonly patch: Partial<RefineOptions> }
  | { readonly kind: "attach_response"; readonly response: RefineResponse | null };

export interface SessionState {
  readonly strokes: ReadonlyArray<StrokeRecord>;
  readonly redoStack: ReadonlyArray<StrokeRecord>;
  readonly activeLabel: PartToken;
  readonly options: RefineOptions;
  readonly lastResponse: RefineResponse | null;
  readonly log: ReadonlyArray<SessionOp>;
}

export function freshSession(): SessionState {
  return {
    strokes: [],
    redoStack: [],
    activeLabel: PART_TOKENS[0],
    options: DEFAULT_OPTIONS,
    lastResponse: null,
    log: [],
  };
}

function validateStroke(stroke: StrokeRecord): void {
  if (!isPartToken(stroke.label)) {
    throw new InvalidStroke(`unknown part label: ${String(stroke.label)}`);
  }
  if (stroke.points.length < 2) {
    throw new InvalidStroke(
      `a stroke needs at least two points, got ${stroke.points.length}`,
    );
  }
  for (const [x, y] of stroke.points) {
    if (!Number.isFinite(x) || !Number.isFinite(y)) {
      throw new InvalidStroke("stroke points must be finite numbers");
    }
  }
  if (!Number.isFinite(stroke.width) || stroke.width <= 0) {
    throw new InvalidStroke(`brush width must be positive, got ${stroke.width}`);
  }
}

function step(state: SessionState, op: SessionOp): SessionState {
  switch (op.kind) {
    case "add_stroke": {
      validateStroke(op.stroke);
      return {
        ...state,
        strokes: [...state.strokes, op.stroke],
        redoStack: [], // a new stroke forks history; stale redos must not survive
      };
    }
    case "undo": {
      if (state.strokes.length === 0) {
        return state;
      }
      const last = state.strokes[state.strokes.length - 1]!;
      return {
        ...state,
        strokes: state.strokes.slice(0, -1),
        redoStack: [...state.redoStack, last],
      };
    }
    case "redo": {
      if (state.redoStack.length === 0) {
        return state;
      }
      const revived = state.redoStack[state.redoStack.length - 1]!;
      return {
        ...state,
        strokes: [...state.strokes, revived],
        redoStack: state.redoStack.slice(0, -1),
      };
    }
    case "select_label": {
      if (!isPartToken(op.label)) {
        throw new InvalidStroke(`unknown part label: ${String(op.label)}`);
      }
      return { ...state, activeLabel: op.label };
    }
    case "set_options": {
      return { ...state, options: { ...state.options, ...op.patch } };
    }
    case "attach_response": {
      return { ...state, lastResponse: op.response };
    }
  }
}

export function applyOp(state: SessionState, op: SessionOp): SessionState {
  const next = step(state, op);
  return { ...next, log: [...state.log, op] };
}

export function addStroke(state: SessionState, stroke: StrokeRecord): SessionState {
  return applyOp(state, { kind: "add_stroke", stroke });
}

export function undo(state: SessionState): SessionState {
  return applyOp(state, { kind: "undo" });
}

export function redo(state: SessionState): SessionState {
  return applyOp(state, { kind: "redo" });
}

export function selectLabel(state: SessionState, label: PartToken): SessionState {
  return applyOp(state, { kind: "select_label", label });
}

export function setOptions(state: SessionState, patch: Partial<RefineOptions>): SessionState {
  return applyOp(state, { kind: "set_options", patch });
}

export function attachResponse(
  state: SessionState,
  response: RefineResponse | null,
): SessionState {
  return applyOp(state, { kind: "attach_response", response });
}

/** Rebuild a session by replaying an op log from scratch. */
export function replay(log: ReadonlyArray<SessionOp>): SessionState {
  let state = freshSession();
  for (const op of log) {
    state = applyOp(state, op);
  }
  return state;
}
