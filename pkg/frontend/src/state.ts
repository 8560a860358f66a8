/** Pure session-state transitions.
 *
 * The transcript is append-only and at most one assistant message is
 * pending at a time; send_message is refused while one is in flight.
 * Style changes apply to messages sent after the toggle, never
 * retroactively. Feedback is tracked per assistant message, keyed by the
 * server-side turn index (out-of-domain clarifications are never recorded
 * as turns by the server, so they carry no feedback widget).
 */

import type {
  AccuracyStep,
  ChatResponse,
  ResponseStyle,
  UiMessage,
  UiSessionState,
} from "./types.js";

export function initialState(): UiSessionState {
  return { sessionId: null, messages: [], style: "concise", connection: "ok" };
}

export function hasPending(state: UiSessionState): boolean {
  return state.messages.some((m) => m.pending);
}

function nextTurnIndex(state: UiSessionState): number {
  // server turn indices count only completed, non-ood assistant turns
  return state.messages.filter(
    (m) => m.role === "assistant" && !m.pending && !m.ood && !m.error,
  ).length;
}

export function beginSend(state: UiSessionState, text: string): UiSessionState {
  if (hasPending(state)) {
    throw new Error("a message is already pending");
  }
  return {
    ...state,
    messages: [
      ...state.messages,
      { role: "user", text },
      { role: "assistant", text: "", pending: true },
    ],
  };
}

export function resolveSend(
  state: UiSessionState,
  response: ChatResponse,
): UiSessionState {
  const turnIndex = response.ood ? null : nextTurnIndex(state);
  const messages = state.messages.map((message): UiMessage => {
    if (!message.pending) {
      return message;
    }
    const resolved: UiMessage = {
      role: "assistant",
      text: response.answer,
      ood: response.ood,
      citations: response.citations,
      contexts: response.contexts,
    };
    if (turnIndex !== null) {
      resolved.feedback = {
        turnIndex,
        selected: null,
        locked: false,
        inFlight: false,
        error: null,
      };
    }
    return resolved;
  });
  return {
    ...state,
    sessionId: response.session_id,
    messages,
    connection: "ok",
  };
}

export function failSend(
  state: UiSessionState,
  opts: { validation: boolean; message: string },
): UiSessionState {
  const messages = state.messages.map((message): UiMessage => {
    if (!message.pending) {
      return message;
    }
    return opts.validation
      ? { role: "assistant", text: "", error: opts.message }
      : { role: "assistant", text: "", error: opts.message, retryable: true };
  });
  return {
    ...state,
    messages,
    connection: opts.validation ? state.connection : "degraded",
  };
}

export function toggleStyle(
  state: UiSessionState,
  style: ResponseStyle,
): UiSessionState {
  return { ...state, style };
}

export function beginFeedback(
  state: UiSessionState,
  messageIndex: number,
  value: AccuracyStep,
): UiSessionState {
  const message = state.messages[messageIndex];
  if (!message || !message.feedback) {
    throw new Error(`message ${messageIndex} does not accept feedback`);
  }
  if (message.feedback.inFlight || message.feedback.locked) {
    return state; // double-submit suppressed
  }
  const messages = state.messages.map((m, i) =>
    i === messageIndex && m.feedback
      ? {
          ...m,
          feedback: {
            ...m.feedback,
            selected: value,
            inFlight: true,
            error: null,
          },
        }
      : m,
  );
  return { ...state, messages };
}

export function resolveFeedback(
  state: UiSessionState,
  messageIndex: number,
): UiSessionState {
  const messages = state.messages.map((m, i) =>
    i === messageIndex && m.feedback
      ? { ...m, feedback: { ...m.feedback, inFlight: false, locked: true } }
      : m,
  );
  return { ...state, messages };
}

export function failFeedback(
  state: UiSessionState,
  messageIndex: number,
  message: string,
): UiSessionState {
  const messages = state.messages.map((m, i) =>
    i === messageIndex && m.feedback
      ? {
          ...m,
          feedback: {
            ...m.feedback,
            inFlight: false,
            locked: false,
            selected: null,
            error: message,
          },
        }
      : m,
  );
  return { ...state, messages };
}
