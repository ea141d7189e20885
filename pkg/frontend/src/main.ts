// App wiring: session bootstrap, query submission, live re-rendering.

import { ApiClient } from "./api.js";
import {
  applyEvent,
  composeTranslationQuestion,
  initialState,
  restoreHistory,
  setFeedback,
  startQuery,
  streamFailed,
  ViewState,
} from "./state.js";
import { render, RenderActions, resolveCitationTitles } from "./render.js";
import { QueryRequest } from "./types.js";

const SESSION_KEY = "polymath-session-id";

export class App {
  state: ViewState = initialState();

  constructor(
    private client: ApiClient,
    private root: HTMLElement,
    private storage: Pick<Storage, "getItem" | "setItem" | "removeItem">,
  ) {}

  private actions: RenderActions = {
    onFeedback: (turnIndex, rating) => void this.feedback(turnIndex, rating),
  };

  private update(next: ViewState): void {
    this.state = next;
    render(this.root, this.state, this.actions);
  }

  async start(): Promise<void> {
    const stored = this.storage.getItem(SESSION_KEY);
    try {
      if (stored) {
        const turns = await this.client.history(stored);
        this.update(restoreHistory({ ...this.state, sessionId: stored }, turns));
        return;
      }
    } catch {
      this.storage.removeItem(SESSION_KEY); // stale id: fall through to a new session
    }
    try {
      const sessionId = await this.client.createSession();
      this.storage.setItem(SESSION_KEY, sessionId);
      this.update({ ...this.state, sessionId });
    } catch (err) {
      this.update({
        ...this.state,
        status: "error",
        banner: `backend unreachable: ${String(err)}`,
      });
    }
  }

  /** One active stream per session; resolves when the stream closes. */
  async submit(question: string, options: Partial<QueryRequest> = {}): Promise<void> {
    if (!this.state.sessionId || this.state.status === "streaming") return;
    this.update(startQuery(this.state, question));
    let completed = false;
    await this.client.streamQuery(
      this.state.sessionId,
      { question, ...options },
      {
        onEvent: (event) => this.update(applyEvent(this.state, event)),
        onDone: () => { completed = true; },
        onError: (message) => this.update(streamFailed(this.state, message)),
      },
    );
    if (completed) await this.refreshTitles();
  }

  async submitTranslation(
    question: string,
    fromDomain: string,
    toDomain: string,
  ): Promise<void> {
    await this.submit(composeTranslationQuestion(question, fromDomain, toDomain));
  }

  private async refreshTitles(): Promise<void> {
    const titles = await resolveCitationTitles(this.client, this.state);
    this.update({ ...this.state, citationTitles: titles });
  }

  async feedback(turnIndex: number, rating: "up" | "down"): Promise<void> {
    if (!this.state.sessionId) return;
    const previous = this.state.turns.find((t) => t.turnIndex === turnIndex)
      ?.feedback ?? null;
    this.update(setFeedback(this.state, turnIndex, rating)); // latch optimistically
    try {
      await this.client.sendFeedback({
        session_id: this.state.sessionId,
        turn_index: turnIndex,
        rating,
      });
    } catch {
      this.update(setFeedback(this.state, turnIndex, previous)); // unlatch
      this.update({ ...this.state, banner: "feedback failed; try again" });
    }
  }
}

export function mount(): void {
  const root = document.getElementById("chat")!;
  const form = document.getElementById("ask-form") as HTMLFormElement;
  const input = document.getElementById("question") as HTMLInputElement;
  const mode = document.getElementById("mode") as HTMLSelectElement;
  const fromDomain = document.getElementById("from-domain") as HTMLInputElement;
  const toDomain = document.getElementById("to-domain") as HTMLInputElement;
  const translationControls = document.getElementById("translation-controls")!;

  const baseUrl = (window as unknown as { POLYMATH_API?: string }).POLYMATH_API
    ?? "http://127.0.0.1:8080";
  const app = new App(new ApiClient(baseUrl), root, window.localStorage);
  void app.start();

  mode.addEventListener("change", () => {
    translationControls.hidden = mode.value !== "translate";
  });

  form.addEventListener("submit", (e) => {
    e.preventDefault();
    const question = input.value.trim();
    if (!question) return;
    input.value = "";
    if (mode.value === "translate") {
      void app.submitTranslation(question, fromDomain.value, toDomain.value);
    } else if (mode.value === "v1" || mode.value === "v2") {
      void app.submit(question, { variant: mode.value });
    } else {
      void app.submit(question);
    }
  });
}

if (typeof document !== "undefined" && document.getElementById("chat")) {
  mount();
}
