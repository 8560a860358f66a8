/** Session persistence so a reload resumes the conversation.
 *
 * Backed by localStorage in the browser; injectable for tests.
 */

import type { UiSessionState } from "./types.js";
import { initialState } from "./state.js";

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const STORAGE_KEY = "coop-rag-session-v1";

export function saveSession(state: UiSessionState, store: KeyValueStore): void {
  // pending/error bubbles are transient; persist only settled messages
  const settled = {
    ...state,
    connection: "ok" as const,
    messages: state.messages.filter((m) => !m.pending && !m.error),
  };
  store.setItem(STORAGE_KEY, JSON.stringify(settled));
}

export function loadSession(store: KeyValueStore): UiSessionState {
  const raw = store.getItem(STORAGE_KEY);
  if (!raw) {
    return initialState();
  }
  try {
    const parsed = JSON.parse(raw) as UiSessionState;
    if (!parsed || !Array.isArray(parsed.messages)) {
      return initialState();
    }
    return {
      sessionId: parsed.sessionId ?? null,
      messages: parsed.messages,
      style: parsed.style === "detailed" ? "detailed" : "concise",
      connection: "ok",
    };
  } catch {
    return initialState();
  }
}

export function clearSession(store: KeyValueStore): void {
  store.removeItem(STORAGE_KEY);
}
