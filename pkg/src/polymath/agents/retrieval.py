"""Retrieval agent: plan, gather evidence, select, gather background, synthesize.

Two planning variants share the downstream steps. v1 routes the question to
domain tags and searches each tag's partition; v2 plans search keywords,
pools corpus-wide hits, and regroups them by domain tag. Every step appends
a StepEvent so the full reasoning path stays visible to users and replayable
in tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..errors import EmptyPlanError, JsonIrrecoverableError, MalformedBackendReplyError
from ..gateway import ChatBackend, ChatMessage, DecodeParams, complete_chat, complete_json, embed_text
from ..index import HybridIndex, SearchHit
from ..prompts import PromptRegistry, default_registry
from ..trace import StepTrace

logger = logging.getLogger(__name__)

NO_EVIDENCE_SENTINEL = "No direct evidence found."
FALLBACK_TAG = "general"


@dataclass
class QueryPlan:
    variant: str  # v1 | v2
    tags: list[str] = field(default_factory=list)
    keywords: list[str] = field(default_factory=list)


@dataclass
class EvidenceNote:
    chunk_id: str
    doc_id: str
    relevant: bool
    summary: Optional[str]
    tag: str

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "relevant": self.relevant,
            "summary": self.summary,
            "tag": self.tag,
        }


@dataclass
class ExpertContext:
    tag: str
    exposition: str
    supporting_notes: list[EvidenceNote]


@dataclass
class SynthesizedAnswer:
    answer: str
    explanation: str
    citations: set[str]
    trace: list = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "answer": self.answer,
            "explanation": self.explanation,
            "citations": sorted(self.citations),
        }


@dataclass
class RetrievalConfig:
    per_tag_k: int = 5       # chunks fetched per planned tag (v1) / kept per group (v2)
    pool_depth: int = 20     # pooled candidate cap for v2 keyword search
    mcq_choices: Optional[list[str]] = None
    params: DecodeParams = field(default_factory=DecodeParams)


def format_mcq(question: str, choices: Sequence[str]) -> str:
    lines = [f"{chr(ord('A') + i)}) {c}" for i, c in enumerate(choices)]
    return question + "\nOptions:\n" + "\n".join(lines)


class RetrievalAgent:
    """Stateless between calls; holds only wiring (index, backend, registry)."""

    def __init__(self, index: HybridIndex, backend: ChatBackend, embedder,
                 vocabulary: Sequence[str],
                 registry: Optional[PromptRegistry] = None):
        self.index = index
        self.backend = backend
        self.embedder = embedder
        self.vocabulary = list(vocabulary)
        self.registry = registry or default_registry()

    # --- planning ---

    def plan_query_v1(self, question: str, vocabulary: Optional[Sequence[str]] = None,
                      trace: Optional[StepTrace] = None,
                      params: Optional[DecodeParams] = None) -> QueryPlan:
        """Ask the model which domain tags to consult, most relevant first."""
        vocab = list(vocabulary) if vocabulary is not None else self.vocabulary
        if not vocab:
            raise ValueError("vocabulary must be non-empty")
        system, body = self.registry.render("plan_query_v1", {
            "category_tags": "[" + ", ".join(vocab) + "]",
            "prompt": question,
        })
        reply = complete_json(self.backend,
                              [ChatMessage("system", system), ChatMessage("user", body)],
                              params, hint="plan_query_v1")
        raw_tags = reply.get("tags")
        if not isinstance(raw_tags, list):
            raise JsonIrrecoverableError("plan reply lacks a tags list",
                                         raw_text=str(reply))
        known = set(vocab)
        tags: list[str] = []
        for tag in raw_tags:
            tag = str(tag).strip().lower()
            if tag in known:
                if tag not in tags:
                    tags.append(tag)
            elif trace is not None:
                trace.warn(f"planner returned unknown tag {tag!r}; dropped")
        if not tags:
            raise EmptyPlanError("no usable tags in plan")
        return QueryPlan(variant="v1", tags=tags)

    def plan_query_v2(self, question: str, trace: Optional[StepTrace] = None,
                      params: Optional[DecodeParams] = None) -> QueryPlan:
        """Ask the model for ranked search keywords."""
        if not question:
            raise ValueError("question must be non-empty")
        system, body = self.registry.render("plan_query_v2", {"prompt": question})
        reply = complete_json(self.backend,
                              [ChatMessage("system", system), ChatMessage("user", body)],
                              params, hint="plan_query_v2")
        raw = reply.get("keywords")
        if not isinstance(raw, list):
            raise JsonIrrecoverableError("plan reply lacks a keywords list",
                                         raw_text=str(reply))
        keywords: list[str] = []
        seen = set()
        for kw in raw:
            kw = str(kw).strip()
            if not kw:
                continue
            folded = kw.lower()
            if folded in seen:
                continue
            seen.add(folded)
            keywords.append(kw)
        if not keywords:
            raise EmptyPlanError("no usable keywords in plan")
        return QueryPlan(variant="v2", keywords=keywords)

    # --- evidence ---

    def gather_evidence(self, question: str, tag: str, k: int = 5,
                        trace: Optional[StepTrace] = None,
                        params: Optional[DecodeParams] = None) -> list[EvidenceNote]:
        """Search one domain partition and run the relevance filter per chunk.

        All notes are returned, relevant or not, for traceability; synthesis
        later uses only the relevant subset (the text-selection step).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        query_vec = embed_text(self.embedder, [question])[0]
        tags = None if tag == FALLBACK_TAG else {tag}
        hits = self.index.hybrid_search(question, query_vec, tags=tags, k=k)
        chunks = [self.index.get_chunk(h.chunk_id) for h in hits]
        return self.filter_evidence(question, tag, chunks, trace=trace, params=params)

    def filter_evidence(self, question: str, tag: str, chunks,
                        trace: Optional[StepTrace] = None,
                        params: Optional[DecodeParams] = None) -> list[EvidenceNote]:
        notes = []
        for chunk in chunks:
            try:
                system, body = self.registry.render("evidence_rag", {
                    "tag": tag,
                    "query_str": question,
                    "context_str": chunk.text,
                })
                verdict = complete_json(
                    self.backend,
                    [ChatMessage("system", system), ChatMessage("user", body)],
                    params, hint="evidence_rag")
                relevant = bool(verdict.get("relevant"))
                summary = verdict.get("summary")
                if relevant:
                    summary = str(summary) if summary is not None else ""
                else:
                    summary = None
            except JsonIrrecoverableError as e:
                # Never abort a gather over one bad verdict.
                relevant, summary = False, None
                if trace is not None:
                    trace.warn(f"evidence verdict unparseable for {chunk.chunk_id}",
                               raw=e.raw_text[:200])
            notes.append(EvidenceNote(chunk_id=chunk.chunk_id, doc_id=chunk.doc_id,
                                      relevant=relevant, summary=summary, tag=tag))
        return notes

    def gather_background(self, question: str, tag: str,
                          evidence: Sequence[EvidenceNote],
                          params: Optional[DecodeParams] = None) -> ExpertContext:
        """Probe the model's own domain knowledge, grounded in the notes."""
        relevant = [n for n in evidence if n.relevant]
        if relevant:
            evidence_text = "\n".join(n.summary for n in relevant)
        else:
            evidence_text = NO_EVIDENCE_SENTINEL
        system, body = self.registry.render("evidentiary_expertise", {
            "tag": tag,
            "query_prompt": question,
            "evidence": evidence_text,
        })
        exposition = complete_chat(
            self.backend,
            [ChatMessage("system", system), ChatMessage("user", body)],
            params, hint="evidentiary_expertise")
        if not exposition.strip():
            raise MalformedBackendReplyError("empty exposition")
        return ExpertContext(tag=tag, exposition=exposition,
                             supporting_notes=relevant)

    # --- synthesis ---

    def synthesize(self, question: str, contexts: Sequence[ExpertContext],
                   params: Optional[DecodeParams] = None) -> SynthesizedAnswer:
        """Integrate the per-domain expert blocks into one {answer, explanation}."""
        if not contexts:
            raise ValueError("contexts must be non-empty")
        block = "\n\n".join(f"[{ctx.tag} expert]\n{ctx.exposition}"
                            for ctx in contexts)
        system, body = self.registry.render("perspective_synthesis", {
            "query_prompt": question,
            "context": block,
        })
        reply = complete_json(
            self.backend,
            [ChatMessage("system", system), ChatMessage("user", body)],
            params, hint="perspective_synthesis")
        citations = {note.doc_id for ctx in contexts for note in ctx.supporting_notes}
        return SynthesizedAnswer(
            answer=str(reply.get("answer", "")),
            explanation=str(reply.get("explanation", "")),
            citations=citations,
        )

    # --- full pipeline ---

    def answer_question(self, question: str, variant: str = "v1",
                        config: Optional[RetrievalConfig] = None,
                        trace: Optional[StepTrace] = None,
                        vocabulary: Optional[Sequence[str]] = None) -> SynthesizedAnswer:
        """Run the five-step workflow end to end for one question."""
        if variant not in ("v1", "v2"):
            raise ValueError(f"unknown variant: {variant!r}")
        config = config or RetrievalConfig()
        trace = trace if trace is not None else StepTrace()
        q = question
        if config.mcq_choices:
            q = format_mcq(question, config.mcq_choices)

        groups = self._plan_and_group(q, variant, config, trace, vocabulary)

        # Evidence phase for every group, then background phase.
        notes_by_group: list[tuple[str, list[EvidenceNote]]] = []
        for tag, chunks in groups:
            if chunks is None:
                notes = self.gather_evidence(q, tag, k=config.per_tag_k,
                                             trace=trace, params=config.params)
            else:
                notes = self.filter_evidence(q, tag, chunks, trace=trace,
                                             params=config.params)
            trace.append("evidence_gathered", {
                "tag": tag,
                "chunks": len(notes),
                "relevant": sum(1 for n in notes if n.relevant),
            })
            notes_by_group.append((tag, notes))

        contexts = []
        for tag, notes in notes_by_group:
            ctx = self.gather_background(q, tag, notes, params=config.params)
            trace.append("background_ready", {
                "tag": tag,
                "supporting_notes": len(ctx.supporting_notes),
            })
            contexts.append(ctx)

        answer = self.synthesize(q, contexts, params=config.params)
        trace.append("synthesis_ready", answer.to_payload())
        answer.trace = trace.events
        return answer

    def _plan_and_group(self, question: str, variant: str,
                        config: RetrievalConfig, trace: StepTrace,
                        vocabulary: Optional[Sequence[str]]):
        """Produce [(tag, chunks-or-None)] groups; None means search per tag."""
        if variant == "v1":
            try:
                plan = self.plan_query_v1(question, vocabulary, trace=trace,
                                          params=config.params)
            except EmptyPlanError:
                trace.warn("empty plan; falling back to corpus-wide gather")
                trace.append("tags_selected",
                             {"tags": [FALLBACK_TAG], "fallback": True})
                return [(FALLBACK_TAG, None)]
            trace.append("tags_selected", {"tags": plan.tags})
            return [(tag, None) for tag in plan.tags]

        try:
            plan = self.plan_query_v2(question, trace=trace, params=config.params)
        except EmptyPlanError:
            trace.warn("empty plan; falling back to corpus-wide gather")
            trace.append("keywords_selected",
                         {"keywords": [], "fallback": True})
            return [(FALLBACK_TAG, None)]
        trace.append("keywords_selected", {"keywords": plan.keywords})

        # Pool corpus-wide hits across keywords, then regroup by domain tag.
        pooled: list[SearchHit] = []
        seen: set[str] = set()
        for keyword in plan.keywords:
            query_vec = embed_text(self.embedder, [keyword])[0]
            for hit in self.index.hybrid_search(keyword, query_vec, tags=None,
                                                k=config.pool_depth):
                if hit.chunk_id not in seen:
                    seen.add(hit.chunk_id)
                    pooled.append(hit)
        pooled = pooled[:config.pool_depth]
        by_tag: dict[str, list] = {}
        for hit in pooled:
            chunk = self.index.get_chunk(hit.chunk_id)
            for tag in sorted(chunk.domain_tags):
                group = by_tag.setdefault(tag, [])
                if len(group) < config.per_tag_k:
                    group.append(chunk)
        if not by_tag:
            return [(FALLBACK_TAG, None)]
        return list(by_tag.items())
