/** Wire types mirroring the /v1 API schemas. */

export interface Citation {
  source: string;
  title: string;
}

export interface ContextEntry {
  chunk_id: string;
  source: string;
  score: number;
  semantic_sim?: number;
  text?: string;
}

export interface ChatRequest {
  session_id?: string;
  message: string;
  image_base64?: string;
  style?: ResponseStyle;
}

export interface ChatResponse {
  session_id: string;
  answer: string;
  citations: Citation[];
  contexts: ContextEntry[];
  ood: boolean;
  latency_ms: number;
  style?: string;
  warnings?: string[];
}

export interface FeedbackRequest {
  session_id: string;
  turn_index: number;
  accuracy_pct: number;
  comment?: string;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export type ResponseStyle = "concise" | "detailed";

export const ACCURACY_STEPS = [0, 25, 50, 75, 100] as const;
export type AccuracyStep = (typeof ACCURACY_STEPS)[number];

/** UI state. */

export interface FeedbackState {
  turnIndex: number;
  selected: AccuracyStep | null;
  locked: boolean;
  inFlight: boolean;
  error: string | null;
}

export interface UiMessage {
  role: "user" | "assistant";
  text: string;
  pending?: boolean;
  ood?: boolean;
  citations?: Citation[];
  contexts?: ContextEntry[];
  feedback?: FeedbackState;
  /** inline validation message for rejected sends */
  error?: string;
  /** offer a retry for transport/server failures */
  retryable?: boolean;
}

export interface UiSessionState {
  sessionId: string | null;
  messages: UiMessage[];
  style: ResponseStyle;
  connection: "ok" | "degraded";
}
