// HTTP client for the polymath API, including the SSE-over-POST reader.
// Frames arrive as `event: <kind>\ndata: <json>\n\n`.

import { FeedbackRequest, QueryRequest, StepEvent, Turn } from "./types.js";

export interface StreamHandlers {
  onEvent: (event: StepEvent) => void;
  onDone: () => void;
  onError: (message: string) => void;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch.bind(globalThis),
  ) {}

  async createSession(): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
    });
    if (res.status !== 201) throw new Error(`createSession: HTTP ${res.status}`);
    const body = (await res.json()) as { session_id: string };
    return body.session_id;
  }

  async history(sessionId: string, n = 50): Promise<Turn[]> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/history?n=${n}`,
    );
    if (!res.ok) throw new Error(`history: HTTP ${res.status}`);
    return (await res.json()) as Turn[];
  }

  async sendFeedback(feedback: FeedbackRequest): Promise<void> {
    const res = await this.fetchImpl(`${this.baseUrl}/feedback`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(feedback),
    });
    if (res.status !== 204) throw new Error(`feedback: HTTP ${res.status}`);
  }

  async docTitle(docId: string): Promise<string> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/corpus/documents/${encodeURIComponent(docId)}/title`,
    );
    if (!res.ok) return docId; // missing docs degrade to raw ids
    const body = (await res.json()) as { title: string };
    return body.title || docId;
  }

  /** POST the question and stream step events until the terminal one. */
  async streamQuery(
    sessionId: string,
    request: QueryRequest,
    handlers: StreamHandlers,
  ): Promise<void> {
    let res: Response;
    try {
      res = await this.fetchImpl(
        `${this.baseUrl}/sessions/${sessionId}/query`,
        {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(request),
        },
      );
    } catch (err) {
      handlers.onError(`connection failed: ${String(err)}`);
      return;
    }
    if (!res.ok || !res.body) {
      handlers.onError(`query failed: HTTP ${res.status}`);
      return;
    }
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        buffer = drainFrames(buffer, handlers.onEvent);
      }
      drainFrames(buffer + "\n\n", handlers.onEvent);
      handlers.onDone();
    } catch (err) {
      handlers.onError(`stream interrupted: ${String(err)}`);
    }
  }
}

/** Parse complete frames out of the buffer; returns the unparsed remainder. */
export function drainFrames(
  buffer: string,
  onEvent: (event: StepEvent) => void,
): string {
  for (;;) {
    const split = buffer.indexOf("\n\n");
    if (split < 0) return buffer;
    const frame = buffer.slice(0, split);
    buffer = buffer.slice(split + 2);
    const event = parseFrame(frame);
    if (event) onEvent(event);
  }
}

export function parseFrame(frame: string): StepEvent | null {
  let kind = "";
  const dataLines: string[] = [];
  for (const line of frame.split("\n")) {
    if (line.startsWith("event: ")) kind = line.slice("event: ".length);
    else if (line.startsWith("data: ")) dataLines.push(line.slice("data: ".length));
  }
  if (!kind || dataLines.length === 0) return null;
  try {
    const event = JSON.parse(dataLines.join("\n")) as StepEvent;
    return { ...event, kind: (kind as StepEvent["kind"]) ?? event.kind };
  } catch {
    return null; // malformed frame; skip rather than break the stream
  }
}
