/** HTTP client for the refinement service.
 *
 * Editor rules encoded here rather than in the UI:
 *  - at most one /refine in flight — a newer submission aborts the pending
 *    one, whose caller sees a "superseded" outcome rather than a result;
 *  - shadow /project requests are debounced on the trailing edge (>=250 ms)
 *    and independently cancelable, so sketching never queues work;
 *  - the network never throws into the UI: failures come back as values
 *    and as status transitions ("offline" when the service is unreachable),
 *    leaving the drawing surface fully functional without a server.
 */

import { PartToken } from "./labels.js";
import {
  HealthResponse,
  ProjectResponse,
  RefinePayload,
  RefineResponse,
  ServiceError,
} from "./protocol.js";
import { serializePayload } from "./payload.js";

export type ConnectionStatus = "idle" | "busy" | "ok" | "offline";

export type RefineOutcome =
  | { readonly kind: "ok"; readonly response: RefineResponse }
  | { readonly kind: "http_error"; readonly status: number; readonly error: ServiceError }
  | { readonly kind: "offline" }
  | { readonly kind: "superseded" };

export const MIN_SHADOW_DEBOUNCE_MS = 250;

function isAbort(err: unknown): boolean {
  return (
    typeof err === "object" &&
    err !== null &&
    (err as { name?: string }).name === "AbortError"
  );
}

async function errorBody(res: Response): Promise<ServiceError> {
  try {
    const body = (await res.json()) as Partial<ServiceError>;
    if (typeof body.code === "string" && typeof body.message === "string") {
      return { code: body.code, message: body.message };
    }
  } catch {
    // fall through to the generic error below
  }
  return { code: "bad_response", message: `HTTP ${res.status}` };
}

export interface StudioClientOptions {
  readonly fetchImpl?: typeof fetch;
  readonly shadowDebounceMs?: number;
}

export class StudioClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: typeof fetch;
  private readonly shadowDebounceMs: number;
  private readonly listeners = new Set<(s: ConnectionStatus) => void>();
  private status: ConnectionStatus = "idle";
  private refineController: AbortController | null = null;
  private shadowController: AbortController | null = null;
  private shadowTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(baseUrl: string, options: StudioClientOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = options.fetchImpl ?? fetch;
    this.shadowDebounceMs = Math.max(
      MIN_SHADOW_DEBOUNCE_MS,
      options.shadowDebounceMs ?? MIN_SHADOW_DEBOUNCE_MS,
    );
  }

  onStatus(listener: (s: ConnectionStatus) => void): () => void {
    this.listeners.add(listener);
    listener(this.status);
    return () => this.listeners.delete(listener);
  }

  currentStatus(): ConnectionStatus {
    return this.status;
  }

  private setStatus(next: ConnectionStatus): void {
    if (next === this.status) {
      return;
    }
    this.status = next;
    for (const listener of this.listeners) {
      listener(next);
    }
  }

  async health(): Promise<HealthResponse | null> {
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/health`);
      if (!res.ok) {
        return null;
      }
      const body = (await res.json()) as HealthResponse;
      this.setStatus("ok");
      return body;
    } catch {
      this.setStatus("offline");
      return null;
    }
  }

  /** Submit the session; a newer call aborts this one ("superseded"). */
  async refine(payload: RefinePayload): Promise<RefineOutcome> {
    this.refineController?.abort();
    const controller = new AbortController();
    this.refineController = controller;
    this.setStatus("busy");
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/refine`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: serializePayload(payload),
        signal: controller.signal,
      });
      if (!res.ok) {
        const error = await errorBody(res);
        if (this.refineController === controller) {
          this.setStatus("ok"); // server reachable; the request was rejected
        }
        return { kind: "http_error", status: res.status, error };
      }
      const response = (await res.json()) as RefineResponse;
      if (this.refineController === controller) {
        this.setStatus("ok");
      }
      return { kind: "ok", response };
    } catch (err) {
      if (isAbort(err)) {
        return { kind: "superseded" };
      }
      if (this.refineController === controller) {
        this.setStatus("offline");
      }
      return { kind: "offline" };
    } finally {
      if (this.refineController === controller) {
        this.refineController = null;
      }
    }
  }

  /**
   * Debounced shadow projection for the active part.  Only the last request
   * inside a debounce window is sent; an in-flight one is aborted first.
   * `onResult(null)` means "no overlay" (failure or offline), never throws.
   */
  requestShadow(
    label: PartToken,
    cropPng: string,
    k: number,
    onResult: (response: ProjectResponse | null) => void,
  ): void {
    if (this.shadowTimer !== null) {
      clearTimeout(this.shadowTimer);
    }
    this.shadowTimer = setTimeout(() => {
      this.shadowTimer = null;
      void this.fireShadow(label, cropPng, k, onResult);
    }, this.shadowDebounceMs);
  }

  private async fireShadow(
    label: PartToken,
    cropPng: string,
    k: number,
    onResult: (response: ProjectResponse | null) => void,
  ): Promise<void> {
    this.shadowController?.abort();
    const controller = new AbortController();
    this.shadowController = controller;
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/project`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ label, crop_png: cropPng, k }),
        signal: controller.signal,
      });
      if (!res.ok) {
        onResult(null); // rejected crop (e.g. blank): just drop the overlay
        return;
      }
      const body = (await res.json()) as ProjectResponse;
      if (this.status !== "busy") {
        this.setStatus("ok");
      }
      onResult(body);
    } catch (err) {
      if (isAbort(err)) {
        return; // superseded by a newer shadow request
      }
      if (this.status !== "busy") {
        this.setStatus("offline");
      }
      onResult(null);
    } finally {
      if (this.shadowController === controller) {
        this.shadowController = null;
      }
    }
  }

  cancelShadow(): void {
    if (this.shadowTimer !== null) {
      clearTimeout(this.shadowTimer);
      this.shadowTimer = null;
    }
    this.shadowController?.abort();
    this.shadowController = null;
  }

  dispose(): void {
    this.cancelShadow();
    this.refineController?.abort();
    this.refineController = null;
  }
}
