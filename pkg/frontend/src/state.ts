// View state and its reducer. The UI performs no reasoning: every displayed
// fact originates from an API payload passed through these pure functions.

import { AnswerPayload, StepEvent, TERMINAL_KINDS, Turn } from "./types.js";

export type ConnectionStatus = "idle" | "streaming" | "error";

export interface TimelineRow {
  seq: number;
  kind: string;
  label: string;
  detail: string;
}

export interface CompletedTurn {
  question: string;
  turnIndex: number;
  kind: "answer" | "refusal" | "error";
  payload: AnswerPayload;
  rows: TimelineRow[];
  feedback: "up" | "down" | null;
}

export interface ViewState {
  sessionId: string | null;
  turns: CompletedTurn[];
  liveQuestion: string | null;
  liveRows: TimelineRow[];
  status: ConnectionStatus;
  banner: string | null;
  citationTitles: Record<string, string>;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    turns: [],
    liveQuestion: null,
    liveRows: [],
    status: "idle",
    banner: null,
    citationTitles: {},
  };
}

function describe(event: StepEvent): { label: string; detail: string } {
  const p = event.payload as Record<string, unknown>;
  switch (event.kind) {
    case "screened":
      return {
        label: "safety screen",
        detail: p["allow"] ? "passed" : `refused (${p["reason"] ?? "policy"})`,
      };
    case "routed":
      return { label: "routed", detail: String(p["target"] ?? "") };
    case "plan_started":
      return { label: "planning", detail: `variant ${p["variant"] ?? ""}` };
    case "tags_selected": {
      const tags = (p["tags"] as string[] | undefined) ?? [];
      return { label: "domains selected", detail: tags.join(", ") };
    }
    case "keywords_selected": {
      const kws = (p["keywords"] as string[] | undefined) ?? [];
      return { label: "keywords planned", detail: kws.join(", ") };
    }
    case "evidence_gathered":
      return {
        label: `evidence: ${p["tag"] ?? ""}`,
        detail: `${p["relevant"] ?? 0} of ${p["chunks"] ?? 0} chunks relevant`,
      };
    case "background_ready":
      return { label: `background: ${p["tag"] ?? p["step"] ?? ""}`, detail: "" };
    case "gap_assessed":
      return { label: "knowledge gap assessed", detail: "" };
    case "bridged":
      return { label: "answer bridged", detail: "" };
    case "synthesis_ready":
      return { label: "synthesis ready", detail: "" };
    case "warning":
      return { label: "warning", detail: String(p["message"] ?? "") };
    case "refused":
      return { label: "refused", detail: String(p["reason"] ?? "") };
    case "final":
      return { label: "final", detail: p["error"] ? String(p["error"]) : "" };
    default:
      return { label: event.kind, detail: "" };
  }
}

export function rowFromEvent(event: StepEvent): TimelineRow {
  const { label, detail } = describe(event);
  return { seq: event.seq, kind: event.kind, label, detail };
}

/** Append one streamed event; rows stay in seq order even if delivery jitters. */
export function applyEvent(state: ViewState, event: StepEvent): ViewState {
  const rows = [...state.liveRows, rowFromEvent(event)].sort(
    (a, b) => a.seq - b.seq,
  );
  let next: ViewState = { ...state, liveRows: rows };
  if (TERMINAL_KINDS.has(event.kind)) {
    const payload = event.payload as AnswerPayload;
    const kind =
      event.kind === "refused" ? "refusal" : payload.error ? "error" : "answer";
    next = {
      ...next,
      status: "idle",
      turns: [
        ...state.turns,
        {
          question: state.liveQuestion ?? "",
          turnIndex: state.turns.length,
          kind,
          payload,
          rows,
          feedback: null,
        },
      ],
      liveQuestion: null,
      liveRows: [],
    };
  }
  return next;
}

export function startQuery(state: ViewState, question: string): ViewState {
  return {
    ...state,
    liveQuestion: question,
    liveRows: [],
    status: "streaming",
    banner: null,
  };
}

export function streamFailed(state: ViewState, message: string): ViewState {
  return {
    ...state,
    status: "error",
    banner: message,
    liveRows: [
      ...state.liveRows,
      { seq: state.liveRows.length, kind: "warning", label: "error", detail: message },
    ],
  };
}

export function setFeedback(
  state: ViewState,
  turnIndex: number,
  rating: "up" | "down" | null,
): ViewState {
  return {
    ...state,
    turns: state.turns.map((t) =>
      t.turnIndex === turnIndex ? { ...t, feedback: rating } : t,
    ),
  };
}

/** Rebuild completed turns from persisted history (page reload path). */
export function restoreHistory(state: ViewState, turns: Turn[]): ViewState {
  return {
    ...state,
    turns: turns.map((t) => ({
      question: t.question,
      turnIndex: t.turn_index,
      kind: t.refusal ? "refusal" : t.answer?.error ? "error" : "answer",
      payload: (t.refusal ?? t.answer ?? {}) as AnswerPayload,
      rows: [],
      feedback: null,
    })),
  };
}

export function composeTranslationQuestion(
  question: string,
  fromDomain: string,
  toDomain: string,
): string {
  return (
    `Translate the following question's answer from the perspective of ` +
    `${fromDomain} into ${toDomain} terms: ${question}`
  );
}
