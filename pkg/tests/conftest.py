import json

import pytest

from polymath.corpus import CorpusStore, Document
from polymath.gateway import (
    BackendProfile,
    ChatBackend,
    HashEmbedder,
    MockChatBackend,
    embed_text,
)
from polymath.index import HybridIndex

TEST_EMBED_DIM = 32

DOC_SPECS = [
    ("bio-mito", "Mitochondrial energetics",
     ["biology"],
     "Mitochondria produce cellular energy through oxidative phosphorylation. "
     "Electron transport chains pump protons across the inner membrane, and "
     "ATP synthase converts the gradient into chemical energy for the cell."),
    ("bio-crispr", "Genome editing with CRISPR",
     ["biology"],
     "CRISPR systems use guide RNA to direct the Cas9 nuclease to a genomic "
     "locus. Double-strand breaks are repaired by end joining or homology "
     "directed repair, enabling precise genome editing in living cells."),
    ("bio-nuclei", "Segmenting packed nuclei",
     ["biology", "computer-science-and-engineering"],
     "Densely packed nuclei in microscopy images challenge segmentation "
     "models. Watershed postprocessing and boundary aware convolutional "
     "networks separate touching nuclei in cellular image analysis."),
    ("bio-protein", "Protein folding landscapes",
     ["biology", "chemistry"],
     "Protein folding follows funnel shaped energy landscapes. Chaperones "
     "assist folding intermediates, and misfolded aggregates underlie many "
     "degenerative diseases."),
    ("med-sepsis", "Early sepsis detection",
     ["medicine"],
     "Sepsis outcomes improve with early antibiotic administration. "
     "Screening scores combine lactate, blood pressure, and respiratory "
     "rate to flag deteriorating patients in emergency departments."),
    ("med-oncology", "Immunotherapy response markers",
     ["medicine", "biology"],
     "Checkpoint inhibitors reactivate exhausted T cells against tumors. "
     "Tumor mutational burden and PD-L1 expression predict response to "
     "immunotherapy across several cancer types."),
    ("med-imaging", "Radiology deep learning",
     ["medicine", "computer-science-and-engineering"],
     "Convolutional networks detect lung nodules in computed tomography. "
     "Training on multi site cohorts with augmentation reduces false "
     "positives in radiology workflows."),
    ("cs-transformers", "Attention architectures",
     ["computer-science-and-engineering"],
     "Transformer models rely on self attention to mix token information. "
     "Scaling laws relate parameter count, data, and compute to language "
     "model loss."),
    ("cs-retrieval", "Hybrid lexical and vector retrieval",
     ["computer-science-and-engineering"],
     "Retrieval systems combine inverted index scoring with dense vector "
     "similarity. Reciprocal rank fusion merges candidate lists from "
     "lexical and semantic searchers."),
    ("phys-qubits", "Superconducting qubits",
     ["physics"],
     "Superconducting qubits store quantum information in circulating "
     "currents. Decoherence from material defects limits gate fidelity in "
     "current quantum processors."),
]


def default_docs() -> list[Document]:
    return [Document(doc_id=d, title=t, body=b, domain_tags=set(tags))
            for d, t, tags, b in DOC_SPECS]


def build_corpus(root, docs=None, window=40, overlap=8, dim=TEST_EMBED_DIM):
    """Ingest, chunk, embed, and index a corpus under ``root``."""
    store = CorpusStore(root)
    embedder = HashEmbedder(dim=dim)
    index = HybridIndex()
    for doc in (docs if docs is not None else default_docs()):
        store.ingest_document(doc)
        chunks = store.chunk_document(doc.doc_id, window_tokens=window,
                                      overlap_tokens=overlap)
        vectors = embed_text(embedder, [c.text for c in chunks])
        for chunk, vec in zip(chunks, vectors):
            chunk.embedding = vec
        index.upsert_chunks(chunks)
    return store, index, embedder


def agent_script(backend=None) -> MockChatBackend:
    """Standard happy-path script covering every template the agents use."""
    b = backend or MockChatBackend()
    b.script_json("plan_query_v1", {"tags": ["biology", "medicine"]})
    b.script_json("plan_query_v2",
                  {"keywords": ["nuclei segmentation", "deep learning"]})
    b.script_json("evidence_rag", {"relevant": True,
                                   "summary": "Summary of the passage."})
    b.script("evidentiary_expertise", "Expert background on the topic.")
    b.script_json("perspective_synthesis",
                  {"answer": "B", "explanation": "Because the evidence says so."})
    b.script("background_expertise", "In-domain background exposition.")
    b.script("gap_assessment", "The gap is terminology and method framing.")
    b.script("gap_bridge", "Bridged answer phrased for your domain.")
    b.script("safety_classifier", "NO")
    b.script_json("semantic_router", {"tool": "retrieval_v1"})
    return b


class SequenceBackend(ChatBackend):
    """Replies (or raises) from a fixed sequence; for retry/repair tests."""

    def __init__(self, replies, retry_budget=3, backoff=0.001):
        self.name = "sequence"
        self.profile = BackendProfile(name="sequence", retry_budget=retry_budget,
                                      backoff_base_s=backoff)
        self.replies = list(replies)
        self.calls = 0

    def complete(self, messages, params, hint=None):
        if self.calls >= len(self.replies):
            raise AssertionError("sequence exhausted")
        reply = self.replies[self.calls]
        self.calls += 1
        if isinstance(reply, Exception):
            raise reply
        return reply


class OracleBackend(ChatBackend):
    """Answers the gold letter (or a deliberately wrong one) per item.

    Locates the item by searching the rendered prompt for its question text,
    so it works under every ablation condition, including full agent runs.
    """

    def __init__(self, items, vocabulary, wrong=False):
        self.name = "anti-oracle" if wrong else "gold-oracle"
        self.profile = BackendProfile(name=self.name, retry_budget=0)
        self.items = list(items)
        self.vocabulary = list(vocabulary)
        self.wrong = wrong
        self.calls = 0

    def _letter_for(self, prompt: str) -> str:
        for item in self.items:
            if item.question in prompt:
                idx = item.gold_index
                if self.wrong:
                    idx = (idx + 1) % len(item.choices)
                return chr(ord("A") + idx)
        raise AssertionError("no benchmark item found in prompt")

    def complete(self, messages, params, hint=None):
        self.calls += 1
        prompt = messages[-1].content
        if hint == "plan_query_v1":
            return json.dumps({"tags": self.vocabulary[:1]})
        if hint == "plan_query_v2":
            return json.dumps({"keywords": ["evidence"]})
        if hint == "evidence_rag":
            return json.dumps({"relevant": True, "summary": "relevant passage"})
        if hint == "evidentiary_expertise":
            return "Background exposition."
        if hint == "perspective_synthesis":
            return json.dumps({"answer": self._letter_for(prompt),
                               "explanation": "oracle"})
        return self._letter_for(prompt)


@pytest.fixture
def corpus_env(tmp_path):
    store, index, embedder = build_corpus(tmp_path / "corpus")
    return store, index, embedder


@pytest.fixture
def scripted_backend():
    return agent_script()


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return path
