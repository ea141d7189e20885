from .retrieval import (
    EvidenceNote,
    ExpertContext,
    QueryPlan,
    RetrievalAgent,
    RetrievalConfig,
    SynthesizedAnswer,
    format_mcq,
)
from .translation import (
    TranslationAgent,
    TranslationRequest,
    TranslationResult,
)

__all__ = [
    "EvidenceNote",
    "ExpertContext",
    "QueryPlan",
    "RetrievalAgent",
    "RetrievalConfig",
    "SynthesizedAnswer",
    "TranslationAgent",
    "TranslationRequest",
    "TranslationResult",
    "format_mcq",
]
