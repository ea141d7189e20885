"""Hybrid search: lexical scoring plus embedding similarity, fused by RRF.

Lexical side defaults to BM25 (k1=1.2, b=0.75) with a TF-IDF-cosine mode
selectable for replication of keyword-planning behavior. The vector side is
exact exhaustive cosine, rescaled to (1+cos)/2 so scores stay nonnegative
(the convention of hosted vector stores). Fusion is reciprocal rank fusion
with constant 60 over both candidate lists truncated at fusion_depth.

Reads are fully concurrent: every search runs against an immutable snapshot
that upserts replace atomically, so a search started before an upsert
completes sees the pre-upsert state.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Chunk
from .errors import DimMismatchError, EmptyQueryError, NoEmbeddedChunksError

RRF_CONSTANT = 60
FUSION_DEPTH = 50

_WORD = re.compile(r"\w+")


def analyze(text: str) -> list[str]:
    """Lowercase + NFC + punctuation-splitting; no stemming."""
    return _WORD.findall(unicodedata.normalize("NFC", text).lower())


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float
    term_rank: Optional[int] = None
    vector_rank: Optional[int] = None


@dataclass(frozen=True)
class IndexStats:
    num_chunks: int
    num_terms: int
    embedding_dim: Optional[int]
    per_tag: dict[str, int] = field(default_factory=dict)


class _Entry:
    __slots__ = ("chunk", "tf", "length", "embedding", "norm")

    def __init__(self, chunk: Chunk):
        self.chunk = chunk
        tokens = analyze(chunk.text)
        self.tf = Counter(tokens)
        self.length = len(tokens)
        self.embedding = None
        self.norm = 0.0
        if chunk.embedding is not None:
            self.embedding = np.asarray(chunk.embedding, dtype=float)
            self.norm = float(np.linalg.norm(self.embedding))


class _State:
    """Immutable index snapshot."""

    def __init__(self, entries: dict[str, _Entry], embedding_dim: Optional[int]):
        self.entries = entries
        self.embedding_dim = embedding_dim
        self.postings: dict[str, dict[str, int]] = {}
        total = 0
        for cid, entry in entries.items():
            total += entry.length
            for term, tf in entry.tf.items():
                self.postings.setdefault(term, {})[cid] = tf
        self.num_chunks = len(entries)
        self.avg_len = (total / self.num_chunks) if self.num_chunks else 0.0


def _tag_match(entry: _Entry, tags: Optional[set[str]]) -> bool:
    return tags is None or bool(entry.chunk.domain_tags & tags)


class HybridIndex:
    def __init__(self, scorer: str = "bm25", k1: float = 1.2, b: float = 0.75,
                 rrf_c: int = RRF_CONSTANT, fusion_depth: int = FUSION_DEPTH):
        if scorer not in ("bm25", "tfidf"):
            raise ValueError(f"unknown scorer: {scorer!r}")
        self.scorer = scorer
        self.k1 = k1
        self.b = b
        self.rrf_c = rrf_c
        self.fusion_depth = fusion_depth
        self._state = _State({}, None)
        self._write_lock = threading.Lock()

    # --- write path ---

    def upsert_chunks(self, chunks: Sequence[Chunk]) -> int:
        """Insert or replace chunks by id; returns count processed."""
        with self._write_lock:
            state = self._state
            dim = state.embedding_dim
            new_entries = dict(state.entries)
            for chunk in chunks:
                entry = _Entry(chunk)
                if entry.embedding is not None:
                    if dim is None:
                        dim = entry.embedding.shape[0]
                    elif entry.embedding.shape[0] != dim:
                        raise DimMismatchError(
                            f"chunk {chunk.chunk_id}: embedding dim "
                            f"{entry.embedding.shape[0]} != index dim {dim}")
                new_entries[chunk.chunk_id] = entry
            self._state = _State(new_entries, dim)
        return len(chunks)

    # --- read path ---

    def get_chunk(self, chunk_id: str) -> Optional[Chunk]:
        entry = self._state.entries.get(chunk_id)
        return entry.chunk if entry else None

    def stats(self) -> IndexStats:
        state = self._state
        per_tag: Counter = Counter()
        for entry in state.entries.values():
            per_tag.update(entry.chunk.domain_tags)
        return IndexStats(
            num_chunks=state.num_chunks,
            num_terms=len(state.postings),
            embedding_dim=state.embedding_dim,
            per_tag=dict(per_tag),
        )

    def _bm25_idf(self, state: _State, term: str) -> float:
        df = len(state.postings.get(term, ()))
        return math.log(1.0 + (state.num_chunks - df + 0.5) / (df + 0.5))

    def _score_bm25(self, state: _State, q_tokens: list[str], cid: str) -> float:
        entry = state.entries[cid]
        dl = entry.length
        score = 0.0
        for term in q_tokens:
            tf = entry.tf.get(term, 0)
            if tf == 0:
                continue
            idf = self._bm25_idf(state, term)
            denom = tf + self.k1 * (1.0 - self.b + self.b * dl / state.avg_len)
            score += idf * tf * (self.k1 + 1.0) / denom
        return score

    def _tfidf_weight(self, state: _State, tf: int, term: str) -> float:
        df = len(state.postings.get(term, ()))
        if df == 0 or state.num_chunks == 0:
            return 0.0
        idf = math.log10(state.num_chunks / df)
        return (1.0 + math.log10(tf)) * idf

    def _score_tfidf(self, state: _State, q_counts: Counter, q_norm: float,
                     cid: str) -> float:
        entry = state.entries[cid]
        doc_norm = math.sqrt(sum(
            self._tfidf_weight(state, tf, t) ** 2 for t, tf in sorted(entry.tf.items())))
        if doc_norm == 0.0 or q_norm == 0.0:
            return 0.0
        score = 0.0
        for term, qtf in q_counts.items():
            tf = entry.tf.get(term, 0)
            if tf == 0:
                continue
            score += (self._tfidf_weight(state, qtf, term)
                      * self._tfidf_weight(state, tf, term))
        return score / (q_norm * doc_norm)

    def term_search(self, query: str, tags: Optional[Iterable[str]] = None,
                    k: int = 10) -> list[SearchHit]:
        """Top-k chunks by lexical score within the tag filter."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q_tokens_all = analyze(query)
        if not q_tokens_all:
            raise EmptyQueryError(repr(query))
        q_tokens = list(dict.fromkeys(q_tokens_all))  # dedup, keep order
        state = self._state
        tag_set = set(tags) if tags is not None else None
        candidates = set()
        for term in q_tokens:
            candidates.update(state.postings.get(term, ()))
        candidates = [cid for cid in candidates
                      if _tag_match(state.entries[cid], tag_set)]
        if self.scorer == "bm25":
            scored = [(self._score_bm25(state, q_tokens, cid), cid)
                      for cid in candidates]
        else:
            q_counts = Counter(q_tokens_all)
            q_norm = math.sqrt(sum(
                self._tfidf_weight(state, qtf, t) ** 2
                for t, qtf in sorted(q_counts.items())))
            scored = [(self._score_tfidf(state, q_counts, q_norm, cid), cid)
                      for cid in candidates]
        scored.sort(key=lambda sc: (-sc[0], sc[1]))
        return [SearchHit(chunk_id=cid, score=score, term_rank=i + 1)
                for i, (score, cid) in enumerate(scored[:k])]

    def vector_search(self, query_embedding, tags: Optional[Iterable[str]] = None,
                      k: int = 10) -> list[SearchHit]:
        """Top-k embedded chunks by cosine similarity, scored as (1+cos)/2."""
        if k < 1:
            raise ValueError("k must be >= 1")
        state = self._state
        q = np.asarray(query_embedding, dtype=float)
        if state.embedding_dim is not None and q.shape[0] != state.embedding_dim:
            raise DimMismatchError(
                f"query dim {q.shape[0]} != index dim {state.embedding_dim}")
        if state.num_chunks and state.embedding_dim is None:
            raise NoEmbeddedChunksError("index holds no embedded chunks")
        tag_set = set(tags) if tags is not None else None
        q_norm = float(np.linalg.norm(q))
        if q_norm == 0.0:
            raise ValueError("query embedding must be nonzero")
        scored = []
        for cid, entry in state.entries.items():
            if entry.embedding is None or not _tag_match(entry, tag_set):
                continue
            cos = float(np.dot(q, entry.embedding)) / (q_norm * entry.norm)
            scored.append(((1.0 + cos) / 2.0, cid))
        scored.sort(key=lambda sc: (-sc[0], sc[1]))
        return [SearchHit(chunk_id=cid, score=score, vector_rank=i + 1)
                for i, (score, cid) in enumerate(scored[:k])]

    def hybrid_search(self, query: str, query_embedding=None,
                      tags: Optional[Iterable[str]] = None,
                      k: int = 10) -> list[SearchHit]:
        """Reciprocal-rank fusion of the lexical and vector candidate lists.

        Both lists are truncated at fusion_depth; a chunk's fused score is
        the sum of 1/(rrf_c + rank) over the lists containing it.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        term_hits = self.term_search(query, tags=tags, k=self.fusion_depth)
        if query_embedding is not None:
            vector_hits = self.vector_search(query_embedding, tags=tags,
                                             k=self.fusion_depth)
        else:
            vector_hits = []
        return self.fuse(term_hits, vector_hits, k=k)

    def fuse(self, term_hits: Sequence[SearchHit],
             vector_hits: Sequence[SearchHit], k: int = 10) -> list[SearchHit]:
        fused: dict[str, float] = {}
        term_rank: dict[str, int] = {}
        vector_rank: dict[str, int] = {}
        for rank, hit in enumerate(term_hits[:self.fusion_depth], 1):
            fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + 1.0 / (self.rrf_c + rank)
            term_rank[hit.chunk_id] = rank
        for rank, hit in enumerate(vector_hits[:self.fusion_depth], 1):
            fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + 1.0 / (self.rrf_c + rank)
            vector_rank[hit.chunk_id] = rank
        ordered = sorted(fused.items(), key=lambda kv: (-kv[1], kv[0]))
        return [SearchHit(chunk_id=cid, score=score,
                          term_rank=term_rank.get(cid),
                          vector_rank=vector_rank.get(cid))
                for cid, score in ordered[:k]]

    # --- persistence ---

    def save_dir(self, corpus_root: os.PathLike | str) -> Path:
        """Persist chunks + embeddings alongside the corpus directory."""
        index_dir = Path(corpus_root) / "index"
        index_dir.mkdir(parents=True, exist_ok=True)
        state = self._state
        tmp = index_dir / "chunks.jsonl.tmp"
        with tmp.open("w", encoding="utf-8") as f:
            for cid in sorted(state.entries):
                f.write(json.dumps(state.entries[cid].chunk.to_record(),
                                   ensure_ascii=False) + "\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, index_dir / "chunks.jsonl")
        meta = {
            "scorer": self.scorer,
            "k1": self.k1,
            "b": self.b,
            "rrf_c": self.rrf_c,
            "fusion_depth": self.fusion_depth,
            "embedding_dim": state.embedding_dim,
        }
        (index_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                             encoding="utf-8")
        return index_dir

    @classmethod
    def load_dir(cls, corpus_root: os.PathLike | str) -> "HybridIndex":
        index_dir = Path(corpus_root) / "index"
        meta_path = index_dir / "meta.json"
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
        index = cls(scorer=meta.get("scorer", "bm25"),
                    k1=meta.get("k1", 1.2), b=meta.get("b", 0.75),
                    rrf_c=meta.get("rrf_c", RRF_CONSTANT),
                    fusion_depth=meta.get("fusion_depth", FUSION_DEPTH))
        chunks_path = index_dir / "chunks.jsonl"
        if chunks_path.exists():
            chunks = []
            with chunks_path.open(encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    chunks.append(Chunk(
                        chunk_id=rec["chunk_id"],
                        doc_id=rec["doc_id"],
                        text=rec["text"],
                        token_span=tuple(rec["token_span"]),
                        domain_tags=set(rec.get("domain_tags", [])),
                        embedding=(np.asarray(rec["embedding"], dtype=float)
                                   if "embedding" in rec else None),
                    ))
            index.upsert_chunks(chunks)
        return index
