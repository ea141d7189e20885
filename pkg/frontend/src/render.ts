// DOM rendering. Pure functions of ViewState; no state lives in the DOM.

import { ApiClient } from "./api.js";
import { CompletedTurn, TimelineRow, ViewState } from "./state.js";

export interface RenderActions {
  onFeedback: (turnIndex: number, rating: "up" | "down") => void;
  onCitationClick?: (docId: string) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTimeline(rows: TimelineRow[]): HTMLElement {
  const list = el("ol", "timeline");
  for (const row of rows) {
    const item = el("li", `timeline-row kind-${row.kind}`);
    item.dataset.seq = String(row.seq);
    item.dataset.kind = row.kind;
    item.append(el("span", "row-label", row.label));
    if (row.detail) item.append(el("span", "row-detail", row.detail));
    list.append(item);
  }
  return list;
}

function renderCitations(
  citations: string[],
  titles: Record<string, string>,
  actions: RenderActions,
): HTMLElement {
  const panel = el("div", "citations");
  panel.append(el("span", "citations-label", "Sources:"));
  for (const docId of citations) {
    const link = el("a", "citation", titles[docId] ?? docId);
    link.href = "#";
    link.dataset.docId = docId;
    link.addEventListener("click", (e) => {
      e.preventDefault();
      actions.onCitationClick?.(docId);
    });
    panel.append(link);
  }
  return panel;
}

function renderFeedback(turn: CompletedTurn, actions: RenderActions): HTMLElement {
  const bar = el("div", "feedback");
  for (const rating of ["up", "down"] as const) {
    const button = el(
      "button",
      `feedback-btn feedback-${rating}` +
        (turn.feedback === rating ? " latched" : ""),
      rating === "up" ? "\u{1F44D}" : "\u{1F44E}",
    );
    button.dataset.rating = rating;
    button.disabled = turn.feedback === rating;
    button.addEventListener("click", () =>
      actions.onFeedback(turn.turnIndex, rating),
    );
    bar.append(button);
  }
  return bar;
}

export function renderTurn(
  turn: CompletedTurn,
  titles: Record<string, string>,
  actions: RenderActions,
): HTMLElement {
  const card = el("section", `turn turn-${turn.kind}`);
  card.dataset.turnIndex = String(turn.turnIndex);
  card.append(el("div", "question", turn.question));
  if (turn.rows.length) card.append(renderTimeline(turn.rows));

  if (turn.kind === "refusal") {
    const refusal = el("div", "refusal-card");
    refusal.append(el("strong", undefined, "Request refused"));
    refusal.append(
      el("p", "refusal-reason", String(turn.payload.reason ?? "policy")),
    );
    card.append(refusal);
  } else if (turn.kind === "error") {
    const errorCard = el("div", "error-card");
    errorCard.append(el("strong", undefined, "Something went wrong"));
    errorCard.append(el("p", undefined, String(turn.payload.error ?? "")));
    card.append(errorCard);
  } else {
    const answer = el("div", "answer-card");
    answer.append(
      el("p", "answer-text", String(turn.payload.answer ?? turn.payload.bridged_answer ?? "")),
    );
    const explanation = turn.payload.explanation ?? turn.payload.knowledge_gap;
    if (explanation) answer.append(el("p", "explanation", String(explanation)));
    const citations = turn.payload.citations ?? [];
    if (citations.length) answer.append(renderCitations(citations, titles, actions));
    card.append(answer);
  }
  card.append(renderFeedback(turn, actions));
  return card;
}

export function render(
  root: HTMLElement,
  state: ViewState,
  actions: RenderActions,
): void {
  root.replaceChildren();
  if (state.banner) {
    root.append(el("div", "banner", state.banner));
  }
  for (const turn of state.turns) {
    root.append(renderTurn(turn, state.citationTitles, actions));
  }
  if (state.liveQuestion !== null) {
    const live = el("section", "turn turn-live");
    live.append(el("div", "question", state.liveQuestion));
    live.append(renderTimeline(state.liveRows));
    live.append(el("div", "spinner", "thinking…"));
    root.append(live);
  }
}

/** Lazily resolve citation titles for every completed answer turn. */
export async function resolveCitationTitles(
  client: ApiClient,
  state: ViewState,
): Promise<Record<string, string>> {
  const wanted = new Set<string>();
  for (const turn of state.turns) {
    for (const docId of turn.payload.citations ?? []) {
      if (!(docId in state.citationTitles)) wanted.add(docId);
    }
  }
  const titles: Record<string, string> = { ...state.citationTitles };
  await Promise.all(
    [...wanted].map(async (docId) => {
      titles[docId] = await client.docTitle(docId);
    }),
  );
  return titles;
}
