"""Durable conversation memory: turns, step traces, and user feedback.

Newline-delimited JSON segment files per session, fsync on append. A crash
mid-append can only leave a torn final line, which readers detect and
ignore, so the store never surfaces a partial turn.

Layout: sessions/<id>/turns.jsonl, sessions/<id>/feedback.jsonl,
sessions/<id>/traces/<turn>.json
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import UnknownSessionError, UnknownTurnError


@dataclass
class Turn:
    session_id: str
    question: str
    answer: Optional[dict] = None
    refusal: Optional[dict] = None
    trace_ref: Optional[str] = None
    turn_index: int = -1
    created_at: str = ""

    def to_record(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "question": self.question,
            "answer": self.answer,
            "refusal": self.refusal,
            "trace_ref": self.trace_ref,
            "created_at": self.created_at,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Turn":
        return cls(
            session_id=rec["session_id"],
            question=rec["question"],
            answer=rec.get("answer"),
            refusal=rec.get("refusal"),
            trace_ref=rec.get("trace_ref"),
            turn_index=rec["turn_index"],
            created_at=rec.get("created_at", ""),
        )


@dataclass
class Feedback:
    session_id: str
    turn_index: int
    rating: str  # up | down
    comment: Optional[str] = None
    created_at: str = ""

    def to_record(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "rating": self.rating,
            "comment": self.comment,
            "created_at": self.created_at,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _read_complete_lines(path: Path) -> list[dict]:
    """Parse complete JSONL records, ignoring a torn trailing line."""
    if not path.exists():
        return []
    data = path.read_bytes()
    if not data:
        return []
    lines = data.split(b"\n")
    # data ending in \n yields a final empty segment; anything else is a
    # torn tail from an interrupted append.
    complete = lines[:-1]
    records = []
    for line in complete:
        if not line.strip():
            continue
        records.append(json.loads(line.decode("utf-8")))
    return records


def _repair_torn_tail(path: Path) -> None:
    """Truncate a torn (newline-less) tail left by an interrupted append."""
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        keep = data.rfind(b"\n") + 1
        with path.open("r+b") as f:
            f.truncate(keep)
            f.flush()
            os.fsync(f.fileno())


class SessionStore:
    """Append-only per-session storage; appends serialized per session."""

    def __init__(self, root: os.PathLike | str):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _require(self, session_id: str) -> Path:
        sdir = self._session_dir(session_id)
        if not (sdir / "turns.jsonl").exists():
            raise UnknownSessionError(session_id)
        return sdir

    def create_session(self) -> str:
        session_id = uuid.uuid4().hex
        sdir = self._session_dir(session_id)
        sdir.mkdir(parents=True)
        (sdir / "traces").mkdir()
        with (sdir / "turns.jsonl").open("a", encoding="utf-8") as f:
            f.flush()
            os.fsync(f.fileno())
        return session_id

    def session_exists(self, session_id: str) -> bool:
        return (self._session_dir(session_id) / "turns.jsonl").exists()

    def session_ids(self) -> list[str]:
        base = self.root / "sessions"
        return sorted(p.name for p in base.iterdir()
                      if (p / "turns.jsonl").exists())

    def append_turn(self, session_id: str, turn: Turn) -> int:
        sdir = self._require(session_id)
        with self._lock_for(session_id):
            _repair_torn_tail(sdir / "turns.jsonl")
            existing = _read_complete_lines(sdir / "turns.jsonl")
            turn.turn_index = len(existing)
            turn.created_at = turn.created_at or _now()
            line = json.dumps(turn.to_record(), ensure_ascii=False) + "\n"
            with (sdir / "turns.jsonl").open("a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
        return turn.turn_index

    def history(self, session_id: str, last_n: Optional[int] = None) -> list[Turn]:
        sdir = self._require(session_id)
        records = _read_complete_lines(sdir / "turns.jsonl")
        turns = [Turn.from_record(r) for r in records]
        if last_n is None:
            return turns
        if last_n <= 0:
            return []
        return turns[-last_n:]

    def turn_count(self, session_id: str) -> int:
        sdir = self._require(session_id)
        return len(_read_complete_lines(sdir / "turns.jsonl"))

    def record_feedback(self, feedback: Feedback) -> None:
        sdir = self._require(feedback.session_id)
        count = len(_read_complete_lines(sdir / "turns.jsonl"))
        if not (0 <= feedback.turn_index < count):
            raise UnknownTurnError(
                f"{feedback.session_id}[{feedback.turn_index}]")
        if feedback.rating not in ("up", "down"):
            raise ValueError(f"bad rating: {feedback.rating!r}")
        feedback.created_at = feedback.created_at or _now()
        with self._lock_for(feedback.session_id):
            _repair_torn_tail(sdir / "feedback.jsonl")
            with (sdir / "feedback.jsonl").open("a", encoding="utf-8") as f:
                f.write(json.dumps(feedback.to_record(), ensure_ascii=False) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def feedback_for(self, session_id: str) -> list[dict]:
        sdir = self._require(session_id)
        return _read_complete_lines(sdir / "feedback.jsonl")

    def save_trace(self, session_id: str, turn_index: int,
                   events: list[dict]) -> str:
        """Write a trace atomically; returns the trace ref path (relative)."""
        sdir = self._require(session_id)
        traces = sdir / "traces"
        traces.mkdir(exist_ok=True)
        tmp = traces / f"{turn_index}.json.tmp"
        tmp.write_text(json.dumps(events, ensure_ascii=False, indent=1),
                       encoding="utf-8")
        final = traces / f"{turn_index}.json"
        os.replace(tmp, final)
        return f"traces/{turn_index}.json"

    def load_trace(self, session_id: str, turn_index: int) -> list[dict]:
        sdir = self._require(session_id)
        path = sdir / "traces" / f"{turn_index}.json"
        if not path.exists():
            raise UnknownTurnError(f"{session_id}[{turn_index}] trace")
        return json.loads(path.read_text(encoding="utf-8"))
