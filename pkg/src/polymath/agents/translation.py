"""Translation agent: bridge an out-of-domain answer into the user's field.

Five steps: answer from the foreign domain (full retrieval pipeline), answer
from the user's own domain (background probe, no retrieval), assess the
knowledge gap between the two, then bridge it. Two orchestration variants
produce identical result texts under a template-keyed backend; they differ
only in conversation topology (one persistent context vs. two translator
contexts exchanging peer messages).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import MalformedBackendReplyError
from ..gateway import ChatBackend, ChatMessage, DecodeParams, complete_chat
from ..prompts import PromptRegistry, default_registry
from ..trace import StepTrace
from .retrieval import RetrievalAgent, RetrievalConfig

VARIANTS = ("persistent_memory", "interactive")


@dataclass
class TranslationRequest:
    question: str
    in_domain_tags: list[str]
    out_of_domain_tags: list[str]
    variant: str = "persistent_memory"

    def validate(self) -> None:
        if not self.question:
            raise ValueError("question must be non-empty")
        if not self.in_domain_tags or not self.out_of_domain_tags:
            raise ValueError("both tag lists must be non-empty")
        if set(self.in_domain_tags) & set(self.out_of_domain_tags):
            raise ValueError("in-domain and out-of-domain tags must be disjoint")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")


@dataclass
class TranslationResult:
    out_of_domain_answer: str
    in_domain_answer: str
    knowledge_gap: str
    bridged_answer: str
    trace: list = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "out_of_domain_answer": self.out_of_domain_answer,
            "in_domain_answer": self.in_domain_answer,
            "knowledge_gap": self.knowledge_gap,
            "bridged_answer": self.bridged_answer,
        }


def join_tags(tags) -> str:
    return ", ".join(tags)


class TranslationAgent:
    def __init__(self, retrieval_agent: RetrievalAgent, backend: ChatBackend,
                 registry: Optional[PromptRegistry] = None,
                 params: Optional[DecodeParams] = None,
                 rag_in_domain: bool = False):
        self.retrieval_agent = retrieval_agent
        self.backend = backend
        self.registry = registry or default_registry()
        self.params = params or DecodeParams()
        # default probes the user's own domain from model knowledge; the
        # flag switches to a retrieval-backed in-domain answer instead
        self.rag_in_domain = rag_in_domain

    # --- individual steps ---

    def answer_out_of_domain(self, question: str, ood_tags,
                             trace: Optional[StepTrace] = None) -> str:
        """Full retrieval pipeline restricted to the foreign domain's tags."""
        if not ood_tags:
            raise ValueError("out-of-domain tags must be non-empty")
        sub_trace = StepTrace()
        answer = self.retrieval_agent.answer_question(
            question, variant="v1", config=RetrievalConfig(params=self.params),
            trace=sub_trace, vocabulary=list(ood_tags))
        text = answer.answer
        if answer.explanation:
            text = f"{answer.answer}\n\n{answer.explanation}"
        if trace is not None:
            trace.append("synthesis_ready", {
                "step": "out_of_domain_answer",
                "tags": list(ood_tags),
                "citations": sorted(answer.citations),
                "sub_events": len(sub_trace.events),
            })
        return text

    def answer_in_domain(self, question: str, in_tags,
                         history: Optional[list[ChatMessage]] = None) -> str:
        """Model-knowledge probe of the user's own domain; no retrieval
        unless ``rag_in_domain`` is set."""
        if not in_tags:
            raise ValueError("in-domain tags must be non-empty")
        if self.rag_in_domain:
            answer = self.retrieval_agent.answer_question(
                question, variant="v1",
                config=RetrievalConfig(params=self.params),
                trace=StepTrace(), vocabulary=list(in_tags))
            text = answer.answer
            if answer.explanation:
                text = f"{answer.answer}\n\n{answer.explanation}"
            if history is not None:
                history.append(ChatMessage("user", question))
                history.append(ChatMessage("assistant", text))
            return text
        system, body = self.registry.render("background_expertise", {
            "discipline": join_tags(in_tags),
            "orig_prompt": question,
        })
        reply = self._chat(system, body, history, hint="background_expertise")
        if not reply.strip():
            raise MalformedBackendReplyError("empty in-domain exposition")
        return reply

    def assess_gap(self, question: str, ood_answer: str, in_answer: str,
                   ood_tags, in_tags,
                   history: Optional[list[ChatMessage]] = None) -> str:
        if not ood_answer or not in_answer:
            raise ValueError("both answers must be non-empty")
        system, body = self.registry.render("gap_assessment", {
            "out_of_domain_tags_str": join_tags(ood_tags),
            "in_domain_tags_str": join_tags(in_tags),
            "orig_prompt": question,
            "out_of_domain_answer": ood_answer,
            "in_domain_answer": in_answer,
        })
        return self._chat(system, body, history, hint="gap_assessment")

    def bridge_gap(self, question: str, gap: str, ood_answer: str,
                   in_answer: str, ood_tags, in_tags,
                   history: Optional[list[ChatMessage]] = None) -> str:
        if not gap:
            raise ValueError("knowledge gap must be non-empty")
        system, body = self.registry.render("gap_bridge", {
            "in_domain_tags_str": join_tags(in_tags),
            "orig_prompt": question,
            "out_of_domain_tags_str": join_tags(ood_tags),
            "knowledge_gap": gap,
            "out_of_domain_answer": ood_answer,
            "in_domain_answer": in_answer,
        })
        return self._chat(system, body, history, hint="gap_bridge")

    def _chat(self, system: str, body: str,
              history: Optional[list[ChatMessage]], hint: str) -> str:
        messages = [ChatMessage("system", system)]
        if history:
            messages.extend(history)
        messages.append(ChatMessage("user", body))
        reply = complete_chat(self.backend, messages, self.params, hint=hint)
        if history is not None:
            history.append(ChatMessage("user", body))
            history.append(ChatMessage("assistant", reply))
        return reply

    # --- full pipeline ---

    def translate(self, request: TranslationRequest,
                  trace: Optional[StepTrace] = None) -> TranslationResult:
        request.validate()
        trace = trace if trace is not None else StepTrace()
        if request.variant == "persistent_memory":
            result = self._translate_persistent(request, trace)
        else:
            result = self._translate_interactive(request, trace)
        result.trace = trace.events
        return result

    def _translate_persistent(self, request: TranslationRequest,
                              trace: StepTrace) -> TranslationResult:
        """One conversation context accumulates all four steps' messages."""
        history: list[ChatMessage] = []
        ood = self.answer_out_of_domain(request.question,
                                        request.out_of_domain_tags, trace=trace)
        history.append(ChatMessage("user", request.question))
        history.append(ChatMessage("assistant", ood))

        in_ans = self.answer_in_domain(request.question, request.in_domain_tags,
                                       history=history)
        trace.append("background_ready", {
            "step": "in_domain_answer",
            "tags": list(request.in_domain_tags),
            "variant": request.variant,
        })
        gap = self.assess_gap(request.question, ood, in_ans,
                              request.out_of_domain_tags, request.in_domain_tags,
                              history=history)
        trace.append("gap_assessed", {"variant": request.variant})
        bridged = self.bridge_gap(request.question, gap, ood, in_ans,
                                  request.out_of_domain_tags,
                                  request.in_domain_tags, history=history)
        trace.append("bridged", {"variant": request.variant})
        return TranslationResult(ood, in_ans, gap, bridged)

    def _translate_interactive(self, request: TranslationRequest,
                               trace: StepTrace) -> TranslationResult:
        """Two translator contexts exchange intermediate texts as messages."""
        ood_history: list[ChatMessage] = []
        in_history: list[ChatMessage] = []

        ood = self.answer_out_of_domain(request.question,
                                        request.out_of_domain_tags, trace=trace)
        ood_history.append(ChatMessage("user", request.question))
        ood_history.append(ChatMessage("assistant", ood))

        in_ans = self.answer_in_domain(request.question, request.in_domain_tags,
                                       history=in_history)
        trace.append("background_ready", {
            "step": "in_domain_answer",
            "tags": list(request.in_domain_tags),
            "variant": request.variant,
        })
        # Peer message: the foreign translator's answer lands in the
        # in-domain translator's context before gap assessment.
        in_history.append(ChatMessage(
            "user", f"[from out-of-domain translator] {ood}"))
        gap = self.assess_gap(request.question, ood, in_ans,
                              request.out_of_domain_tags, request.in_domain_tags,
                              history=in_history)
        trace.append("gap_assessed", {"variant": request.variant})
        bridged = self.bridge_gap(request.question, gap, ood, in_ans,
                                  request.out_of_domain_tags,
                                  request.in_domain_tags, history=in_history)
        trace.append("bridged", {"variant": request.variant})
        return TranslationResult(ood, in_ans, gap, bridged)
