// @vitest-environment jsdom
//
// UI contract against a scripted mock server: one timeline row per event in
// seq order, no answer card on the refusal path, feedback POSTs with correct
// payloads. The UI performs no reasoning: everything rendered comes from the
// mock server's payloads.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/main.js";
import { StepEvent } from "../src/types.js";

function ev(seq: number, kind: StepEvent["kind"], payload: Record<string, unknown> = {}): StepEvent {
  return { seq, kind, payload, timestamp: 0 };
}

const HAPPY: StepEvent[] = [
  ev(0, "screened", { allow: true, stage: "classifier" }),
  ev(1, "routed", { target: "retrieval_v1" }),
  ev(2, "plan_started", { variant: "v1" }),
  ev(3, "tags_selected", { tags: ["biology"] }),
  ev(4, "evidence_gathered", { tag: "biology", chunks: 3, relevant: 2 }),
  ev(5, "background_ready", { tag: "biology" }),
  ev(6, "synthesis_ready", { answer: "B" }),
  ev(7, "final", {
    answer: "B",
    explanation: "the evidence shows it",
    citations: ["doc-1", "doc-2"],
  }),
];

const REFUSAL: StepEvent[] = [
  ev(0, "screened", { allow: false, stage: "rules", reason: "denied phrase" }),
  ev(1, "refused", { reason: "denied phrase", stage: "rules" }),
];

interface RecordedRequest {
  url: string;
  method: string;
  body: unknown;
}

/** In-memory server speaking the polymath API over fetch. */
class MockServer {
  requests: RecordedRequest[] = [];
  scripts: Record<string, StepEvent[]> = {};
  titles: Record<string, string> = { "doc-1": "Mitochondrial energetics" };

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    this.requests.push({ url, method, body });

    if (url.endsWith("/sessions") && method === "POST") {
      return json({ session_id: "session-1" }, 201);
    }
    if (url.includes("/history")) {
      return json([]);
    }
    if (url.endsWith("/query") && method === "POST") {
      const events = this.scripts[(body as { question: string }).question] ?? HAPPY;
      const text = events
        .map((e) => `event: ${e.kind}\ndata: ${JSON.stringify(e)}\n\n`)
        .join("");
      return new Response(text, {
        status: 200,
        headers: { "Content-Type": "text/event-stream" },
      });
    }
    if (url.endsWith("/feedback") && method === "POST") {
      const fb = body as { turn_index: number };
      return new Response(null, { status: fb.turn_index === 99 ? 404 : 204 });
    }
    if (url.includes("/corpus/documents/")) {
      const docId = decodeURIComponent(url.split("/").at(-2)!);
      if (docId in this.titles) return json({ doc_id: docId, title: this.titles[docId] });
      return json({ error: "unknown" }, 404);
    }
    return json({ error: `unhandled ${method} ${url}` }, 500);
  };
}

function json(value: unknown, status = 200): Response {
  return new Response(JSON.stringify(value), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

class MemoryStorage {
  private map = new Map<string, string>();
  getItem(key: string) { return this.map.get(key) ?? null; }
  setItem(key: string, value: string) { this.map.set(key, value); }
  removeItem(key: string) { this.map.delete(key); }
}

let server: MockServer;
let app: App;
let root: HTMLElement;

beforeEach(async () => {
  document.body.innerHTML = '<main id="chat"></main>';
  root = document.getElementById("chat")!;
  server = new MockServer();
  app = new App(new ApiClient("http://api", server.fetch), root, new MemoryStorage());
  await app.start();
});

describe("timeline rendering", () => {
  it("renders one row per event, in seq order", async () => {
    await app.submit("How do models segment nuclei?");
    const rows = [...root.querySelectorAll(".timeline-row")];
    expect(rows).toHaveLength(HAPPY.length);
    expect(rows.map((r) => (r as HTMLElement).dataset.seq)).toEqual(
      HAPPY.map((e) => String(e.seq)),
    );
    expect(rows.map((r) => (r as HTMLElement).dataset.kind)).toEqual(
      HAPPY.map((e) => e.kind),
    );
  });

  it("renders the answer card only after the terminal event", async () => {
    await app.submit("How do models segment nuclei?");
    const card = root.querySelector(".answer-card")!;
    expect(card).not.toBeNull();
    expect(card.querySelector(".answer-text")!.textContent).toBe("B");
    expect(card.querySelector(".explanation")!.textContent).toBe(
      "the evidence shows it",
    );
  });

  it("resolves citation titles lazily, degrading to raw ids", async () => {
    await app.submit("How do models segment nuclei?");
    const citations = [...root.querySelectorAll(".citation")];
    expect(citations.map((c) => c.textContent)).toEqual([
      "Mitochondrial energetics", // resolved title
      "doc-2",                     // missing doc degrades to its id
    ]);
  });
});

describe("refusal path", () => {
  it("shows a refusal card with the reason and no answer card", async () => {
    server.scripts["refuse me"] = REFUSAL;
    await app.submit("refuse me");
    expect(root.querySelector(".answer-card")).toBeNull();
    const refusal = root.querySelector(".refusal-card")!;
    expect(refusal).not.toBeNull();
    expect(refusal.querySelector(".refusal-reason")!.textContent).toBe(
      "denied phrase",
    );
    const rows = [...root.querySelectorAll(".timeline-row")];
    expect(rows.map((r) => (r as HTMLElement).dataset.kind)).toEqual(
      ["screened", "refused"],
    );
  });
});

describe("feedback", () => {
  it("POSTs the exact payload and latches the button", async () => {
    await app.submit("How do models segment nuclei?");
    const up = root.querySelector(".feedback-up") as HTMLButtonElement;
    up.click();
    await Promise.resolve();
    await Promise.resolve();
    const feedbackRequests = server.requests.filter((r) =>
      r.url.endsWith("/feedback"),
    );
    expect(feedbackRequests).toHaveLength(1);
    expect(feedbackRequests[0]!.body).toEqual({
      session_id: "session-1",
      turn_index: 0,
      rating: "up",
    });
    const latched = root.querySelector(".feedback-up") as HTMLButtonElement;
    expect(latched.classList.contains("latched")).toBe(true);
    expect(latched.disabled).toBe(true);
  });

  it("unlatches and shows a banner when the POST fails", async () => {
    await app.submit("How do models segment nuclei?");
    // force 404 by pointing the turn index at the sentinel
    app.state = {
      ...app.state,
      turns: app.state.turns.map((t) => ({ ...t, turnIndex: 99 })),
    };
    await app.feedback(99, "down");
    expect(app.state.turns[0]!.feedback).toBeNull();
    expect(root.querySelector(".banner")!.textContent).toContain(
      "feedback failed",
    );
  });
});

describe("session lifecycle", () => {
  it("creates a session on first start", () => {
    const creates = server.requests.filter(
      (r) => r.url.endsWith("/sessions") && r.method === "POST",
    );
    expect(creates).toHaveLength(1);
    expect(app.state.sessionId).toBe("session-1");
  });

  it("restores history for a stored session id", async () => {
    const storage = new MemoryStorage();
    storage.setItem("polymath-session-id", "session-1");
    const restoringServer = new MockServer();
    restoringServer.fetch = async (input, init) => {
      const url = String(input);
      if (url.includes("/history")) {
        return json([
          {
            session_id: "session-1", turn_index: 0, question: "old q",
            answer: { answer: "A", citations: [] }, refusal: null,
            trace_ref: null, created_at: "",
          },
        ]);
      }
      return server.fetch(input, init);
    };
    const restored = new App(
      new ApiClient("http://api", restoringServer.fetch),
      root,
      storage,
    );
    await restored.start();
    expect(restored.state.turns).toHaveLength(1);
    expect(root.querySelectorAll(".turn")).toHaveLength(1);
  });

  it("shows an error banner when the backend is down", async () => {
    const downApp = new App(
      new ApiClient("http://api", async () => {
        throw new Error("ECONNREFUSED");
      }),
      root,
      new MemoryStorage(),
    );
    await downApp.start();
    expect(root.querySelector(".banner")!.textContent).toContain(
      "backend unreachable",
    );
  });

  it("ignores submits while a stream is active", async () => {
    // craft a never-ending stream by using a manual fetch
    let firstStarted = false;
    const slowServer = new MockServer();
    const originalFetch = slowServer.fetch;
    slowServer.fetch = async (input, init) => {
      const url = String(input);
      if (url.endsWith("/query")) {
        slowServer.requests.push({ url, method: init?.method ?? "GET",
                                   body: JSON.parse(String(init?.body)) });
        firstStarted = true;
        return new Response(new ReadableStream<Uint8Array>({}), {
          status: 200,
        });
      }
      return originalFetch(input, init);
    };
    const busyApp = new App(
      new ApiClient("http://api", slowServer.fetch),
      root,
      new MemoryStorage(),
    );
    await busyApp.start();
    void busyApp.submit("first");
    await Promise.resolve();
    expect(firstStarted).toBe(true);
    await busyApp.submit("second"); // dropped: one active stream per session
    const queries = slowServer.requests.filter((r) => r.url.endsWith("/query"));
    expect(queries).toHaveLength(1);
  });
});
