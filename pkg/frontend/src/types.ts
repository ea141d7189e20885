// Wire types mirroring the API's JSON schemas verbatim.

export type EventKind =
  | "screened"
  | "routed"
  | "plan_started"
  | "tags_selected"
  | "keywords_selected"
  | "evidence_gathered"
  | "background_ready"
  | "gap_assessed"
  | "bridged"
  | "synthesis_ready"
  | "warning"
  | "refused"
  | "final";

export interface StepEvent {
  seq: number;
  kind: EventKind;
  payload: Record<string, unknown>;
  timestamp: number;
}

export interface AnswerPayload {
  answer?: string;
  explanation?: string;
  citations?: string[];
  bridged_answer?: string;
  out_of_domain_answer?: string;
  in_domain_answer?: string;
  knowledge_gap?: string;
  error?: string;
  reason?: string;
  stage?: string;
}

export interface Turn {
  session_id: string;
  turn_index: number;
  question: string;
  answer: AnswerPayload | null;
  refusal: AnswerPayload | null;
  trace_ref: string | null;
  created_at: string;
}

export interface QueryRequest {
  question: string;
  variant?: "v1" | "v2";
  mcq?: string[];
}

export interface FeedbackRequest {
  session_id: string;
  turn_index: number;
  rating: "up" | "down";
  comment?: string;
}

export const TERMINAL_KINDS: ReadonlySet<string> = new Set(["final", "refused"]);
