/** Thin typed client for the /v1 API.
 *
 * The fetch implementation is injected so contract tests can replay
 * recorded fixtures without a network. Errors are normalized into
 * ApiError carrying the server's machine-readable code when present.
 */

import type {
  ApiErrorBody,
  ChatRequest,
  ChatResponse,
  FeedbackRequest,
} from "./types.js";
import { ACCURACY_STEPS } from "./types.js";

/** Mirror of the server's base64 payload cap: reject before uploading. */
export const MAX_IMAGE_BASE64_BYTES = 5 * 1024 * 1024;

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }

  /** 4xx problems are the caller's input; 5xx/0 mean the service is off. */
  get isValidation(): boolean {
    return this.status >= 400 && this.status < 500;
  }
}

export type FetchLike = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

async function errorFrom(status: number, payload: unknown): Promise<ApiError> {
  const body = payload as Partial<ApiErrorBody> | null;
  if (body && body.error && typeof body.error.code === "string") {
    return new ApiError(status, body.error.code, body.error.message ?? "");
  }
  return new ApiError(status, "http_error", `HTTP ${status}`);
}

export class CoopRagApi {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn =
      fetchFn ?? ((url, init) => fetch(url, init) as never);
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    let response: Awaited<ReturnType<FetchLike>>;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
    } catch (cause) {
      throw new ApiError(0, "network", String(cause));
    }
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    if (response.status < 200 || response.status >= 300) {
      throw await errorFrom(response.status, body);
    }
    return body as T;
  }

  chat(request: ChatRequest): Promise<ChatResponse> {
    return this.post<ChatResponse>("/v1/chat", request);
  }

  feedback(request: FeedbackRequest): Promise<{ accepted: boolean }> {
    if (!ACCURACY_STEPS.includes(request.accuracy_pct as never)) {
      // never let an off-scale value reach the wire
      return Promise.reject(
        new ApiError(
          0,
          "invalid_accuracy",
          `accuracy_pct must be one of ${ACCURACY_STEPS.join(", ")}`,
        ),
      );
    }
    return this.post<{ accepted: boolean }>("/v1/feedback", request);
  }
}

/** Base64-encode image bytes, enforcing the transport cap client-side. */
export function encodeImageBytes(bytes: Uint8Array): string {
  let binary = "";
  const step = 0x8000;
  for (let i = 0; i < bytes.length; i += step) {
    binary += String.fromCharCode(...bytes.subarray(i, i + step));
  }
  const encoded = btoa(binary);
  if (encoded.length > MAX_IMAGE_BASE64_BYTES) {
    throw new ApiError(
      0,
      "payload_too_large",
      "image exceeds the 5 MiB upload limit",
    );
  }
  return encoded;
}
