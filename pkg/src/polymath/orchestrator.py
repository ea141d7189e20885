"""Session-scoped front controller.

Order is fixed: safety screen first (no agent or model call may precede an
allowing screened event), then semantic routing via a JSON tool-selection
call, then agent execution with recent conversation history prepended.
Every request produces a gapless event stream ending in exactly one terminal
event, and every turn (refusals included) persists to the session store.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agents import (
    RetrievalAgent,
    RetrievalConfig,
    TranslationAgent,
    TranslationRequest,
)
from .errors import BackendError, JsonIrrecoverableError, PolymathError, UnknownSessionError
from .gateway import ChatBackend, ChatMessage, DecodeParams, complete_chat, complete_json
from .sessions import SessionStore, Turn
from .trace import StepEvent, StepTrace

logger = logging.getLogger(__name__)

DEFAULT_HISTORY_WINDOW = 10
ROUTE_TARGETS = ("retrieval_v1", "retrieval_v2", "translation")
DEFAULT_ROUTE = "retrieval_v1"

SAFETY_SYSTEM = (
    "You are a safety reviewer for a scientific research assistant. "
    "Answer with a single word: YES or NO."
)
SAFETY_PROMPT = (
    "Does the following question seek assistance with causing harm, "
    "weaponization, or clearly unethical dual-use research, rather than "
    "legitimate scientific inquiry?\n\nQuestion: {question}\n\nAnswer YES or NO."
)

ROUTER_SYSTEM = (
    "You are a semantic router for a research assistant. Select exactly one "
    "tool for the question and respond in JSON."
)
ROUTER_PROMPT = (
    "Available tools:\n"
    "- retrieval_v1: answer a question by routing it to relevant domain "
    "corpora. No arguments.\n"
    "- retrieval_v2: answer a question via keyword search planning. "
    "No arguments.\n"
    "- translation: translate an answer from a foreign domain into the "
    "asker's domain. Arguments: \"in\" (asker's domain tags, comma separated), "
    "\"out\" (foreign domain tags, comma separated).\n"
    "{history}"
    "\nQuestion: {question}\n\n"
    "Respond as {{\"tool\": \"<name>\", ...arguments}}."
)


@dataclass(frozen=True)
class SafetyVerdict:
    allow: bool
    reason: Optional[str]
    stage: str  # rules | classifier


@dataclass(frozen=True)
class RouteDecision:
    target: str
    arguments: dict = field(default_factory=dict)


@dataclass
class TurnOutcome:
    kind: str  # answer | refusal | error
    payload: dict
    events: list[StepEvent]
    turn_index: int


def load_denylist(path) -> list[str]:
    """One phrase per line; ``#`` comments and blank lines ignored."""
    phrases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        phrases.append(line.lower())
    return phrases


@dataclass
class OrchestratorConfig:
    history_window: int = DEFAULT_HISTORY_WINDOW
    default_route: str = DEFAULT_ROUTE
    classifier_enabled: bool = True
    translation_variant: str = "persistent_memory"
    enabled_tools: tuple = ROUTE_TARGETS


class Orchestrator:
    def __init__(self, store: SessionStore, retrieval_agent: RetrievalAgent,
                 translation_agent: TranslationAgent, backend: ChatBackend,
                 denylist: Optional[list[str]] = None,
                 config: Optional[OrchestratorConfig] = None,
                 params: Optional[DecodeParams] = None):
        self.store = store
        self.retrieval_agent = retrieval_agent
        self.translation_agent = translation_agent
        self.backend = backend
        self.denylist = [p.lower() for p in (denylist or [])]
        self.config = config or OrchestratorConfig()
        self.params = params or DecodeParams()
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    # --- safety ---

    def safety_screen(self, question: str) -> SafetyVerdict:
        """Stage 1: denylist phrase rules. Stage 2: yes/no classifier call.

        Classifier outages fail closed: an unreachable or unparseable
        safety check refuses the question.
        """
        lowered = question.lower()
        for phrase in self.denylist:
            if phrase in lowered:
                return SafetyVerdict(allow=False,
                                     reason=f"matches denied phrase: {phrase!r}",
                                     stage="rules")
        if not self.config.classifier_enabled:
            return SafetyVerdict(allow=True, reason=None, stage="rules")
        try:
            reply = complete_chat(
                self.backend,
                [ChatMessage("system", SAFETY_SYSTEM),
                 ChatMessage("user", SAFETY_PROMPT.format(question=question))],
                self.params, hint="safety_classifier")
        except BackendError:
            return SafetyVerdict(allow=False, reason="safety check unavailable",
                                 stage="classifier")
        word = reply.strip().split()[0].strip(".,!").lower() if reply.strip() else ""
        if word == "no":
            return SafetyVerdict(allow=True, reason=None, stage="classifier")
        if word == "yes":
            return SafetyVerdict(allow=False,
                                 reason="classifier flagged potential dual-use risk",
                                 stage="classifier")
        return SafetyVerdict(allow=False, reason="safety check unavailable",
                             stage="classifier")

    # --- routing ---

    def route(self, question: str, history: list[Turn],
              trace: Optional[StepTrace] = None) -> RouteDecision:
        """Tool-selection call; unknown or invalid picks fall back to default."""
        history_block = ""
        if history:
            history_block = ("\nConversation so far:\n"
                             + _format_history(history) + "\n")
        try:
            reply = complete_json(
                self.backend,
                [ChatMessage("system", ROUTER_SYSTEM),
                 ChatMessage("user", ROUTER_PROMPT.format(
                     history=history_block, question=question))],
                self.params, hint="semantic_router")
        except JsonIrrecoverableError:
            if trace is not None:
                trace.warn("router reply unparseable; using default route")
            return RouteDecision(target=self.config.default_route)
        tool = str(reply.get("tool", ""))
        arguments = reply.get("arguments")
        if not isinstance(arguments, dict):
            arguments = {k: v for k, v in reply.items() if k != "tool"}
        if tool not in ROUTE_TARGETS or tool not in self.config.enabled_tools:
            if trace is not None:
                trace.warn(f"router chose unavailable tool {tool!r}; "
                           "using default route")
            return RouteDecision(target=self.config.default_route)
        if tool == "translation":
            in_tags = _split_tags(arguments.get("in"))
            out_tags = _split_tags(arguments.get("out"))
            if not in_tags or not out_tags or set(in_tags) & set(out_tags):
                if trace is not None:
                    trace.warn("router gave invalid translation arguments; "
                               "using default route")
                return RouteDecision(target=self.config.default_route)
            return RouteDecision(target=tool,
                                 arguments={"in": in_tags, "out": out_tags})
        return RouteDecision(target=tool)

    # --- main entry ---

    def handle_query(self, session_id: str, question: str,
                     mcq_choices: Optional[list[str]] = None,
                     variant: Optional[str] = None,
                     sink=None) -> TurnOutcome:
        if not self.store.session_exists(session_id):
            raise UnknownSessionError(session_id)
        # One in-flight turn per session; requests across sessions run freely.
        with self._session_lock(session_id):
            return self._handle_locked(session_id, question, mcq_choices,
                                       variant, sink)

    def _handle_locked(self, session_id: str, question: str,
                       mcq_choices: Optional[list[str]],
                       variant: Optional[str], sink) -> TurnOutcome:
        trace = StepTrace(sink=sink)
        verdict = self.safety_screen(question)
        screened: dict = {"allow": verdict.allow, "stage": verdict.stage}
        if not verdict.allow:
            screened["reason"] = verdict.reason
        trace.append("screened", screened)

        if not verdict.allow:
            payload = {"reason": verdict.reason, "stage": verdict.stage}
            trace.append("refused", payload)
            turn_index = self._persist(session_id, question, trace,
                                       refusal=payload)
            return TurnOutcome("refusal", payload, trace.events, turn_index)

        history = self.store.history(session_id,
                                     last_n=self.config.history_window)
        if variant in ("v1", "v2"):
            decision = RouteDecision(target=f"retrieval_{variant}")
            trace.append("routed", {"target": decision.target, "forced": True})
        else:
            decision = self.route(question, history, trace=trace)
            trace.append("routed", {"target": decision.target,
                                    "arguments": decision.arguments})

        contextual = _with_history(question, history)
        try:
            payload = self._execute(decision, contextual, mcq_choices, trace)
        except (PolymathError, ValueError) as e:
            payload = {"error": str(e), "error_type": type(e).__name__}
            trace.append("final", payload)
            turn_index = self._persist(session_id, question, trace,
                                       answer=payload)
            return TurnOutcome("error", payload, trace.events, turn_index)
        trace.append("final", payload)
        turn_index = self._persist(session_id, question, trace, answer=payload)
        return TurnOutcome("answer", payload, trace.events, turn_index)

    def _execute(self, decision: RouteDecision, question: str,
                 mcq_choices: Optional[list[str]], trace: StepTrace) -> dict:
        if decision.target in ("retrieval_v1", "retrieval_v2"):
            agent_variant = decision.target.rsplit("_", 1)[1]
            trace.append("plan_started", {"variant": agent_variant})
            answer = self.retrieval_agent.answer_question(
                question, variant=agent_variant,
                config=RetrievalConfig(mcq_choices=mcq_choices,
                                       params=self.params),
                trace=trace)
            return answer.to_payload()
        request = TranslationRequest(
            question=question,
            in_domain_tags=decision.arguments["in"],
            out_of_domain_tags=decision.arguments["out"],
            variant=self.config.translation_variant,
        )
        result = self.translation_agent.translate(request, trace=trace)
        payload = result.to_payload()
        payload["answer"] = result.bridged_answer
        return payload

    def _persist(self, session_id: str, question: str, trace: StepTrace,
                 answer: Optional[dict] = None,
                 refusal: Optional[dict] = None) -> int:
        # Trace file lands before the turn record; a crash in between leaves
        # an orphan trace, never a turn without its trace.
        turn = Turn(session_id=session_id, question=question,
                    answer=answer, refusal=refusal)
        turn_index = self.store.turn_count(session_id)
        turn.trace_ref = self.store.save_trace(session_id, turn_index,
                                               trace.to_list())
        self.store.append_turn(session_id, turn)
        return turn.turn_index


def _split_tags(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, list):
        items = [str(v) for v in value]
    else:
        items = str(value).split(",")
    return [t.strip().lower() for t in items if t.strip()]


def _format_history(history: list[Turn]) -> str:
    lines = []
    for turn in history:
        answer = ""
        if turn.answer:
            answer = turn.answer.get("answer") or turn.answer.get("bridged_answer") or ""
        elif turn.refusal:
            answer = "(refused)"
        lines.append(f"Q: {turn.question}\nA: {answer}")
    return "\n\n".join(lines)


def _with_history(question: str, history: list[Turn]) -> str:
    if not history:
        return question
    return ("Conversation so far:\n" + _format_history(history)
            + "\n\nQuestion: " + question)
