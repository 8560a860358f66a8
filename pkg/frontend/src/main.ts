/** DOM glue: wires the pure state/render modules to the page.
 *
 * API base URL resolution order: window.COOP_RAG_API_BASE, a
 * <meta name="coop-rag-api-base"> tag, then same-origin.
 */

import { ApiError, CoopRagApi, encodeImageBytes } from "./api.js";
import {
  beginFeedback,
  beginSend,
  failFeedback,
  failSend,
  hasPending,
  initialState,
  resolveFeedback,
  resolveSend,
  toggleStyle,
} from "./state.js";
import { renderStatusBar, renderTranscript } from "./render.js";
import { clearSession, loadSession, saveSession } from "./storage.js";
import type { AccuracyStep, ChatRequest, UiSessionState } from "./types.js";

declare global {
  interface Window {
    COOP_RAG_API_BASE?: string;
  }
}

function apiBase(): string {
  if (window.COOP_RAG_API_BASE) {
    return window.COOP_RAG_API_BASE;
  }
  const meta = document.querySelector<HTMLMetaElement>(
    'meta[name="coop-rag-api-base"]',
  );
  return meta?.content || "";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

const api = new CoopRagApi(apiBase());
let state: UiSessionState = loadSession(window.localStorage);
let lastUserText = "";

const transcript = el<HTMLDivElement>("transcript");
const statusBar = el<HTMLDivElement>("status");
const form = el<HTMLFormElement>("composer");
const input = el<HTMLTextAreaElement>("message");
const imageInput = el<HTMLInputElement>("image");
const styleSelect = el<HTMLSelectElement>("style");
const newButton = el<HTMLButtonElement>("new-session");
const sendButton = el<HTMLButtonElement>("send");

function update(next: UiSessionState): void {
  state = next;
  saveSession(state, window.localStorage);
  transcript.innerHTML = renderTranscript(state);
  statusBar.innerHTML = renderStatusBar(state);
  sendButton.disabled = hasPending(state);
  transcript.scrollTop = transcript.scrollHeight;
}

async function readImage(): Promise<string | undefined> {
  const file = imageInput.files?.[0];
  if (!file) {
    return undefined;
  }
  const bytes = new Uint8Array(await file.arrayBuffer());
  return encodeImageBytes(bytes); // throws payload_too_large before upload
}

async function send(text: string): Promise<void> {
  if (!text.trim() && !imageInput.files?.length) {
    return;
  }
  if (hasPending(state)) {
    return;
  }
  let image: string | undefined;
  try {
    image = await readImage();
  } catch (error) {
    if (error instanceof ApiError) {
      update(
        failSend(beginSend(state, text), {
          validation: true,
          message: error.message,
        }),
      );
      return;
    }
    throw error;
  }
  lastUserText = text;
  update(beginSend(state, text));
  const request: ChatRequest = { message: text, style: state.style };
  if (state.sessionId) {
    request.session_id = state.sessionId;
  }
  if (image) {
    request.image_base64 = image;
  }
  try {
    const response = await api.chat(request);
    update(resolveSend(state, response));
  } catch (error) {
    const apiError =
      error instanceof ApiError
        ? error
        : new ApiError(0, "network", String(error));
    update(
      failSend(state, {
        validation: apiError.isValidation,
        message: apiError.message || apiError.code,
      }),
    );
  } finally {
    imageInput.value = "";
  }
}

form.addEventListener("submit", (event) => {
  event.preventDefault();
  const text = input.value;
  input.value = "";
  void send(text);
});

styleSelect.addEventListener("change", () => {
  const style = styleSelect.value === "detailed" ? "detailed" : "concise";
  update(toggleStyle(state, style));
});

newButton.addEventListener("click", () => {
  clearSession(window.localStorage);
  update(initialState());
});

transcript.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.matches("button.retry")) {
    void send(lastUserText);
    return;
  }
  if (target.matches("button.feedback-step")) {
    const messageIndex = Number(target.dataset.message);
    const value = Number(target.dataset.accuracy) as AccuracyStep;
    const message = state.messages[messageIndex];
    if (!message?.feedback || !state.sessionId) {
      return;
    }
    const before = state;
    const after = beginFeedback(before, messageIndex, value);
    if (after === before) {
      return; // locked or already in flight
    }
    update(after);
    api
      .feedback({
        session_id: state.sessionId,
        turn_index: message.feedback.turnIndex,
        accuracy_pct: value,
      })
      .then(() => update(resolveFeedback(state, messageIndex)))
      .catch((error: unknown) => {
        const message_ =
          error instanceof ApiError ? error.message : String(error);
        update(failFeedback(state, messageIndex, message_));
      });
  }
});

styleSelect.value = state.style;
update(state);
