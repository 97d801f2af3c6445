/** Pure view builders.
 *
 * Views are plain descriptor trees ({tag, attrs, children}) so they can be
 * asserted in tests without a DOM; `mount` turns a tree into real elements
 * and is only exercised by the browser entry point.  No builder touches
 * session or network state — they render whatever they are handed.
 */

import { ConnectionStatus } from "./api.js";
import { ProjectionReport, RefineResponse } from "./protocol.js";

export interface VNode {
  readonly tag: string;
  readonly attrs: Readonly<Record<string, string>>;
  readonly children: ReadonlyArray<VNode | string>;
}

export function h(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Array<VNode | string>
): VNode {
  return { tag, attrs, children };
}

export function mount(node: VNode | string, doc: Document): Node {
  if (typeof node === "string") {
    return doc.createTextNode(node);
  }
  const el = doc.createElement(node.tag);
  for (const [key, value] of Object.entries(node.attrs)) {
    el.setAttribute(key, value);
  }
  for (const child of node.children) {
    el.appendChild(mount(child, doc));
  }
  return el;
}

const STATUS_TEXT: Record<ConnectionStatus, string> = {
  idle: "idle",
  busy: "working…",
  ok: "connected",
  offline: "offline",
};

export function statusBadge(status: ConnectionStatus): VNode {
  return h(
    "span",
    { class: `badge badge-${status}`, "data-status": status },
    STATUS_TEXT[status],
  );
}

function pngImage(base64: string, alt: string, cssClass: string): VNode {
  return h("img", {
    class: cssClass,
    alt,
    width: "256",
    height: "256",
    src: `data:image/png;base64,${base64}`,
  });
}

function panel(title: string, body: VNode): VNode {
  return h(
    "figure",
    { class: "panel" },
    body,
    h("figcaption", {}, title),
  );
}

/**
 * The four result panels: the user's input strokes (rendered locally into
 * the slot element the caller provides), then the service's refined sketch,
 * part-parsing map, and colored preview.
 */
export function resultPanels(
  response: RefineResponse,
  inputSlot: VNode,
): VNode {
  return h(
    "div",
    { class: "panels" },
    panel("input strokes", inputSlot),
    panel("refined sketch", pngImage(response.sketch_png, "refined sketch", "result-sketch")),
    panel("part parsing", pngImage(response.parsing_png, "part parsing map", "result-parsing")),
    panel("preview", pngImage(response.preview_png, "colored preview", "result-preview")),
  );
}

const IDENTITY = [1, 0, 0, 0, 1, 0];

function isIdentity(coeffs: ReadonlyArray<number>): boolean {
  return (
    coeffs.length === 6 &&
    coeffs.every((v, i) => Math.abs(v - IDENTITY[i]!) <= 1e-9)
  );
}

/** Per-part total transform table; the identity row is flagged "reference". */
export function transformReadout(
  totals: Record<string, ReadonlyArray<number>>,
): VNode {
  const rows: VNode[] = [
    h(
      "tr",
      {},
      ...["part", "a", "b", "tx", "c", "d", "ty", ""].map((t) => h("th", {}, t)),
    ),
  ];
  for (const [label, coeffs] of Object.entries(totals)) {
    rows.push(
      h(
        "tr",
        { "data-part": label },
        h("td", {}, label),
        ...coeffs.map((v) => h("td", { class: "num" }, v.toFixed(4))),
        h("td", {}, isIdentity(coeffs) ? "reference" : ""),
      ),
    );
  }
  return h("table", { class: "transforms" }, ...rows);
}

/** Neighbor/weight/residual summary per projected part. */
export function projectionReadout(
  projections: Record<string, ProjectionReport>,
): VNode {
  const items: VNode[] = [];
  for (const [label, report] of Object.entries(projections)) {
    items.push(
      h(
        "li",
        { "data-part": label },
        `${label}: neighbors [${report.neighbor_ids.join(", ")}], ` +
          `residual ${report.residual.toExponential(3)}`,
      ),
    );
  }
  return h("ul", { class: "projections" }, ...items);
}

export interface ErrorNotice {
  readonly code: string;
  readonly message: string;
  readonly httpStatus: number;
}

/** Inline error banner for a rejected request; drawing stays untouched. */
export function errorBanner(notice: ErrorNotice): VNode {
  return h(
    "div",
    { class: "error-banner", role: "alert", "data-code": notice.code },
    `${notice.httpStatus} ${notice.code}: ${notice.message}`,
  );
}
