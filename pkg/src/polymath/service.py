"""HTTP facade: sessions, streaming query handling, corpus admin, feedback.

Step events stream as server-sent events with the exact framing
``event: <kind>\\ndata: <json>\\n\\n``; the terminal event (final or refused)
carries the answer payload and closes the stream. The service holds no state
above the session store, so a restart preserves all history.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from .corpus import CorpusStore
from .errors import UnknownSessionError, UnknownTurnError
from .gateway import ChatBackend
from .index import HybridIndex
from .orchestrator import Orchestrator
from .sessions import Feedback, SessionStore
from .trace import StepEvent, TERMINAL_KINDS

logger = logging.getLogger(__name__)

DEFAULT_HISTORY_N = 50


@dataclass
class ApiConfig:
    bind: str = "127.0.0.1:8080"
    corpus_dir: str = "corpus"
    cors_origins: list[str] = field(default_factory=list)
    history_default_n: int = DEFAULT_HISTORY_N


def sse_frame(event: StepEvent) -> str:
    return f"event: {event.kind}\ndata: {json.dumps(event.to_dict(), ensure_ascii=False)}\n\n"


def create_app(orchestrator: Orchestrator, sessions: SessionStore,
               corpus: CorpusStore, index: HybridIndex,
               backends: dict[str, ChatBackend],
               config: Optional[ApiConfig] = None) -> FastAPI:
    config = config or ApiConfig()
    app = FastAPI(title="polymath", docs_url=None, redoc_url=None)

    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.cors_origins,
            allow_methods=["GET", "POST", "OPTIONS"],
            allow_headers=["*"],
        )

    @app.post("/sessions", status_code=201)
    def create_session():
        try:
            session_id = sessions.create_session()
        except OSError as e:
            logger.error("session create failed: %s", e)
            return JSONResponse({"error": "session store failure"},
                                status_code=500)
        return {"session_id": session_id}

    @app.post("/sessions/{session_id}/query")
    async def query(session_id: str, request: Request):
        if not sessions.session_exists(session_id):
            return JSONResponse({"error": "unknown session"}, status_code=404)
        body = await request.json()
        question = str(body.get("question", "")).strip()
        if not question:
            return JSONResponse({"error": "question required"}, status_code=400)
        variant = body.get("variant")
        mcq = body.get("mcq")
        if mcq is not None and not (isinstance(mcq, list)
                                    and all(isinstance(c, str) for c in mcq)):
            return JSONResponse({"error": "mcq must be a list of strings"},
                                status_code=400)

        events: queue.Queue = queue.Queue()

        def run():
            try:
                orchestrator.handle_query(session_id, question,
                                          mcq_choices=mcq, variant=variant,
                                          sink=events.put)
            except Exception as e:  # orchestrator already terminates traces;
                logger.exception("query failed outside trace")
                events.put(StepEvent(seq=-1, kind="final",
                                     payload={"error": str(e)}, timestamp=0.0))
            finally:
                events.put(None)

        threading.Thread(target=run, daemon=True).start()

        def stream():
            while True:
                event = events.get()
                if event is None:
                    break
                yield sse_frame(event)
                if event.kind in TERMINAL_KINDS:
                    # drain the sentinel, then close promptly
                    while events.get() is not None:
                        pass
                    break

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    @app.get("/sessions/{session_id}/history")
    def history(session_id: str, n: int = config.history_default_n):
        try:
            turns = sessions.history(session_id, last_n=n)
        except UnknownSessionError:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return [t.to_record() for t in turns]

    @app.post("/feedback", status_code=204)
    async def feedback(request: Request):
        body = await request.json()
        rating = body.get("rating")
        if rating not in ("up", "down"):
            return JSONResponse({"error": "rating must be up or down"},
                                status_code=400)
        if not isinstance(body.get("turn_index"), int):
            return JSONResponse({"error": "turn_index must be an integer"},
                                status_code=400)
        fb = Feedback(session_id=str(body.get("session_id", "")),
                      turn_index=body["turn_index"],
                      rating=rating,
                      comment=body.get("comment"))
        try:
            sessions.record_feedback(fb)
        except (UnknownSessionError, UnknownTurnError):
            return JSONResponse({"error": "unknown turn"}, status_code=404)
        return Response(status_code=204)

    @app.post("/corpus/documents")
    async def ingest(request: Request, index_now: bool = False):
        raw = (await request.body()).decode("utf-8")
        lines = raw.splitlines()
        ingested, diagnostics = corpus.load_corpus_lines(lines)
        if index_now and ingested:
            from .gateway import embed_text

            embedder = getattr(orchestrator.retrieval_agent, "embedder", None)
            for doc in corpus.documents()[-ingested:]:
                chunks = corpus.chunk_document(doc.doc_id)
                if embedder is not None and chunks:
                    vectors = embed_text(embedder, [c.text for c in chunks])
                    for chunk, vec in zip(chunks, vectors):
                        chunk.embedding = vec
                index.upsert_chunks(chunks)
        return {"ingested": ingested, "rejected": len(diagnostics),
                "diagnostics": diagnostics[:20]}

    @app.get("/sessions/{session_id}/traces/{turn_index}")
    def trace(session_id: str, turn_index: int):
        try:
            return sessions.load_trace(session_id, turn_index)
        except (UnknownSessionError, UnknownTurnError):
            return JSONResponse({"error": "unknown trace"}, status_code=404)

    @app.get("/corpus/documents/{doc_id}/title")
    def doc_title(doc_id: str):
        if doc_id not in corpus:
            return JSONResponse({"error": "unknown document"}, status_code=404)
        return {"doc_id": doc_id, "title": corpus.get(doc_id).title}

    @app.get("/healthz")
    def healthz():
        backend_status = {name: ("ok" if b.healthy() else "degraded")
                          for name, b in backends.items()}
        return {
            "status": "ok",
            "corpus_chunks": index.stats().num_chunks,
            "backends": backend_status,
        }

    return app
