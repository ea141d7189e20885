"""Step traces: the ordered event record behind answer transparency.

Every query handled by an agent or the orchestrator appends StepEvents to a
StepTrace. Seq numbers are gapless from 0 within one trace; exactly one
terminal event (``final`` or ``refused``) closes a request-level trace.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

EVENT_KINDS = frozenset({
    "screened",
    "routed",
    "plan_started",
    "tags_selected",
    "keywords_selected",
    "evidence_gathered",
    "background_ready",
    "gap_assessed",
    "bridged",
    "synthesis_ready",
    "warning",
    "refused",
    "final",
})

TERMINAL_KINDS = frozenset({"final", "refused"})


@dataclass(frozen=True)
class StepEvent:
    seq: int
    kind: str
    payload: dict
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }


@dataclass
class StepTrace:
    """Append-only event list with gapless seq numbering.

    ``sink`` (when given) is called with each event as it is appended,
    which is how the HTTP service streams steps live.
    """

    events: list[StepEvent] = field(default_factory=list)
    sink: Optional[Callable[[StepEvent], None]] = None

    def append(self, kind: str, payload: Optional[dict[str, Any]] = None) -> StepEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind}")
        event = StepEvent(
            seq=len(self.events),
            kind=kind,
            payload=payload or {},
            timestamp=time.time(),
        )
        self.events.append(event)
        if self.sink is not None:
            self.sink(event)
        return event

    def warn(self, message: str, **extra: Any) -> StepEvent:
        return self.append("warning", {"message": message, **extra})

    def kinds(self) -> list[str]:
        return [e.kind for e in self.events]

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.events]


def events_from_list(records: list[dict]) -> list[StepEvent]:
    """Rebuild events from their persisted JSON form."""
    return [
        StepEvent(
            seq=r["seq"],
            kind=r["kind"],
            payload=r.get("payload", {}),
            timestamp=r.get("timestamp", 0.0),
        )
        for r in records
    ]
