/** Browser entry point: wires the session, raster, client, and views to a
 * real DOM.  Everything testable lives in the imported modules; this file
 * is the glue (pointer events, canvas painting, element lookups) and is
 * deliberately kept free of math and protocol logic.
 */

import { StudioClient, ConnectionStatus, RefineOutcome } from "./api.js";
import { PART_COLORS, PART_TOKENS, PartToken } from "./labels.js";
import { buildRefinePayload, EmptySession, rasterizeSession } from "./payload.js";
import { encodeGrayPng, inkToGrayBytes, toBase64 } from "./png.js";
import { CANVAS_SIZE, CROP_RESOLUTION, Ink } from "./raster.js";
import {
  addStroke,
  attachResponse,
  freshSession,
  redo,
  selectLabel,
  SessionState,
  setOptions,
  undo,
} from "./session.js";
import {
  errorBanner,
  h,
  mount,
  projectionReadout,
  resultPanels,
  statusBadge,
  transformReadout,
  VNode,
} from "./ui.js";
import { Box } from "./geometry.js";

const SERVICE_URL = (window as { SKETCHREFINE_URL?: string }).SKETCHREFINE_URL ?? "";

let session: SessionState = freshSession();
let brushWidth = 3;
let pendingPoints: Array<readonly [number, number]> = [];
let shadowBox: Box | null = null;

const client = new StudioClient(SERVICE_URL);

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const drawCanvas = byId<HTMLCanvasElement>("draw");
const overlayCanvas = byId<HTMLCanvasElement>("overlay");
const statusHost = byId<HTMLElement>("status");
const paletteHost = byId<HTMLElement>("palette");
const resultsHost = byId<HTMLElement>("results");
const noticeHost = byId<HTMLElement>("notice");

function hexToRgb(hex: string): [number, number, number] {
  return [
    parseInt(hex.slice(1, 3), 16),
    parseInt(hex.slice(3, 5), 16),
    parseInt(hex.slice(5, 7), 16),
  ];
}

/** Paint the drawing surface from session state (plus the live stroke). */
function paintCanvas(): void {
  const ctx = drawCanvas.getContext("2d")!;
  const image = ctx.createImageData(CANVAS_SIZE, CANVAS_SIZE);
  image.data.fill(255);
  const strokes = [...session.strokes];
  if (pendingPoints.length >= 2) {
    strokes.push({ label: session.activeLabel, points: pendingPoints, width: brushWidth });
  }
  for (const part of rasterizeSession(strokes)) {
    const [r, g, b] = hexToRgb(PART_COLORS[part.label]);
    const ink: Ink = part.ink;
    for (let i = 0; i < ink.data.length; i++) {
      const v = ink.data[i]!;
      if (v <= 0) continue;
      const o = i * 4;
      image.data[o] = Math.round((1 - v) * image.data[o]! + v * r);
      image.data[o + 1] = Math.round((1 - v) * image.data[o + 1]! + v * g);
      image.data[o + 2] = Math.round((1 - v) * image.data[o + 2]! + v * b);
    }
  }
  ctx.putImageData(image, 0, 0);
}

function clearOverlay(): void {
  const ctx = overlayCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
  shadowBox = null;
}

/** Ask for a shadow projection of the active part (debounced in the client). */
function scheduleShadow(): void {
  const active = rasterizeSession(session.strokes).find(
    (p) => p.label === session.activeLabel,
  );
  if (active === undefined) {
    clearOverlay();
    return;
  }
  const png = encodeGrayPng(inkToGrayBytes(active.crop), CROP_RESOLUTION, CROP_RESOLUTION);
  const box = active.box;
  client.requestShadow(session.activeLabel, toBase64(png), session.options.k, (res) => {
    if (res === null) {
      clearOverlay();
      return;
    }
    const img = new Image();
    img.onload = () => {
      const ctx = overlayCanvas.getContext("2d")!;
      ctx.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
      ctx.globalAlpha = 0.3;
      ctx.drawImage(img, box.x, box.y, box.w, box.h);
      ctx.globalAlpha = 1;
      shadowBox = box;
    };
    img.src = `data:image/png;base64,${res.crop_png}`;
  });
}

function setNotice(node: VNode | null): void {
  noticeHost.replaceChildren();
  if (node !== null) {
    noticeHost.appendChild(mount(node, document));
  }
}

function renderResults(): void {
  resultsHost.replaceChildren();
  const response = session.lastResponse;
  if (response === null) {
    return;
  }
  const inputSlot = h("img", {
    class: "result-input",
    alt: "input strokes",
    width: "256",
    height: "256",
    src: drawCanvas.toDataURL("image/png"),
  });
  resultsHost.appendChild(mount(resultPanels(response, inputSlot), document));
  resultsHost.appendChild(mount(transformReadout(response.total_transforms), document));
  resultsHost.appendChild(mount(projectionReadout(response.projections), document));
}

function renderStatus(status: ConnectionStatus): void {
  statusHost.replaceChildren();
  statusHost.appendChild(mount(statusBadge(status), document));
}

function renderPalette(): void {
  paletteHost.replaceChildren();
  for (const token of PART_TOKENS) {
    const active = token === session.activeLabel ? " active" : "";
    const node = h(
      "button",
      {
        class: `swatch${active}`,
        "data-label": token,
        style: `--swatch:${PART_COLORS[token]}`,
        type: "button",
      },
      token,
    );
    const el = mount(node, document) as HTMLButtonElement;
    el.addEventListener("click", () => {
      session = selectLabel(session, token);
      renderPalette();
      scheduleShadow();
    });
    paletteHost.appendChild(el);
  }
}

async function submit(): Promise<void> {
  setNotice(null);
  let payload;
  try {
    payload = buildRefinePayload(session);
  } catch (err) {
    if (err instanceof EmptySession) {
      setNotice(errorBanner({ httpStatus: 0, code: "empty_sketch", message: err.message }));
      return;
    }
    throw err;
  }
  const outcome: RefineOutcome = await client.refine(payload);
  switch (outcome.kind) {
    case "ok":
      session = attachResponse(session, outcome.response);
      renderResults();
      break;
    case "http_error":
      setNotice(
        errorBanner({
          httpStatus: outcome.status,
          code: outcome.error.code,
          message: outcome.error.message,
        }),
      );
      break;
    case "offline":
      setNotice(
        errorBanner({
          httpStatus: 0,
          code: "offline",
          message: "service unreachable — drawing continues locally",
        }),
      );
      break;
    case "superseded":
      break; // a newer submission took over
  }
}

function canvasPoint(ev: PointerEvent): readonly [number, number] {
  const rect = drawCanvas.getBoundingClientRect();
  return [
    ((ev.clientX - rect.left) / rect.width) * CANVAS_SIZE,
    ((ev.clientY - rect.top) / rect.height) * CANVAS_SIZE,
  ];
}

function wirePointer(): void {
  drawCanvas.addEventListener("pointerdown", (ev) => {
    drawCanvas.setPointerCapture(ev.pointerId);
    pendingPoints = [canvasPoint(ev)];
  });
  drawCanvas.addEventListener("pointermove", (ev) => {
    if (pendingPoints.length === 0) {
      return;
    }
    pendingPoints.push(canvasPoint(ev));
    paintCanvas();
  });
  const finish = () => {
    if (pendingPoints.length >= 2) {
      session = addStroke(session, {
        label: session.activeLabel,
        points: pendingPoints,
        width: brushWidth,
      });
      scheduleShadow();
    }
    pendingPoints = [];
    paintCanvas();
  };
  drawCanvas.addEventListener("pointerup", finish);
  drawCanvas.addEventListener("pointercancel", () => {
    pendingPoints = [];
    paintCanvas();
  });
}

function wireControls(): void {
  byId<HTMLButtonElement>("undo").addEventListener("click", () => {
    session = undo(session);
    paintCanvas();
    scheduleShadow();
  });
  byId<HTMLButtonElement>("redo").addEventListener("click", () => {
    session = redo(session);
    paintCanvas();
    scheduleShadow();
  });
  byId<HTMLButtonElement>("submit").addEventListener("click", () => void submit());
  const width = byId<HTMLInputElement>("brush-width");
  width.addEventListener("change", () => {
    brushWidth = Math.max(1, Number(width.value) || 3);
  });
  const kInput = byId<HTMLInputElement>("opt-k");
  kInput.addEventListener("change", () => {
    session = setOptions(session, { k: Math.max(1, Number(kInput.value) || 10) });
  });
  const stepsInput = byId<HTMLInputElement>("opt-steps");
  stepsInput.addEventListener("change", () => {
    session = setOptions(session, { steps: Math.max(0, Number(stepsInput.value) || 3) });
  });
  const skipProj = byId<HTMLInputElement>("opt-skip-projection");
  skipProj.addEventListener("change", () => {
    session = setOptions(session, { skipProjection: skipProj.checked });
    void submit(); // instant A/B on toggle
  });
  const skipTrans = byId<HTMLInputElement>("opt-skip-transformation");
  skipTrans.addEventListener("change", () => {
    session = setOptions(session, { skipTransformation: skipTrans.checked });
    void submit();
  });
  window.addEventListener("keydown", (ev) => {
    if ((ev.ctrlKey || ev.metaKey) && ev.key.toLowerCase() === "z") {
      ev.preventDefault();
      session = ev.shiftKey ? redo(session) : undo(session);
      paintCanvas();
      scheduleShadow();
    }
  });
}

client.onStatus(renderStatus);
renderPalette();
wirePointer();
wireControls();
paintCanvas();
void client.health();

export { shadowBox }; // exposed for devtools inspection
