"""Document ingestion, domain tagging, chunking, and corpus persistence.

A corpus lives in one directory: an append-only document log plus a tag
vocabulary file. Chunking uses whitespace/punctuation word tokens (never
model-specific subwords) so spans are deterministic and model-independent.
"""

from __future__ import annotations

import json
import logging
import os
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from filelock import FileLock

from .errors import (
    BadWindowError,
    CorpusFormatError,
    DuplicateIdError,
    EmptyBodyError,
    UnknownDocError,
    UnknownTagError,
)

logger = logging.getLogger(__name__)

# Seeded with the corpus categories the shipped vocabulary covers; a corpus
# dir may override via its vocabulary.txt.
DEFAULT_VOCABULARY = (
    "medicine",
    "computer-science-and-engineering",
    "environmental-science",
    "biology",
    "physics",
    "psychology",
    "chemistry",
    "mathematics",
)

DEFAULT_WINDOW_TOKENS = 512
DEFAULT_OVERLAP_TOKENS = 64

_WORD = re.compile(r"\w+")


def word_tokens(text: str) -> list[tuple[int, int]]:
    """Character spans of word tokens (runs of word chars)."""
    return [(m.start(), m.end()) for m in _WORD.finditer(text)]


@dataclass
class Document:
    doc_id: str
    title: str
    body: str
    domain_tags: set[str] = field(default_factory=set)
    source_meta: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "body": self.body,
            "domain_tags": sorted(self.domain_tags),
            "source_meta": dict(self.source_meta),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Document":
        return cls(
            doc_id=str(rec["doc_id"]),
            title=str(rec.get("title", "")),
            body=str(rec["body"]),
            domain_tags=set(rec.get("domain_tags", [])),
            source_meta={str(k): str(v) for k, v in rec.get("source_meta", {}).items()},
        )


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_span: tuple[int, int]
    domain_tags: set[str]
    embedding: Optional[object] = None  # numpy array once embedded

    def to_record(self) -> dict:
        rec = {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "token_span": list(self.token_span),
            "domain_tags": sorted(self.domain_tags),
        }
        if self.embedding is not None:
            rec["embedding"] = [float(x) for x in self.embedding]
        return rec


def normalize_tag(tag: str) -> str:
    return unicodedata.normalize("NFC", tag).strip().lower()


class CorpusStore:
    """One corpus directory: documents.jsonl log + vocabulary.txt.

    Single exclusive writer per corpus (file lock); reads never lock.
    """

    def __init__(self, root: os.PathLike | str,
                 vocabulary: Optional[Iterable[str]] = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._doc_log = self.root / "documents.jsonl"
        self._vocab_file = self.root / "vocabulary.txt"
        self._lock = FileLock(str(self.root / ".writer.lock"))
        if not self._vocab_file.exists():
            vocab = list(vocabulary) if vocabulary else list(DEFAULT_VOCABULARY)
            self._vocab_file.write_text("\n".join(vocab) + "\n", encoding="utf-8")
        self.vocabulary: list[str] = [
            normalize_tag(line)
            for line in self._vocab_file.read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        ]
        self._docs: dict[str, Document] = {}
        self._replay_log()

    def _replay_log(self) -> None:
        if not self._doc_log.exists():
            return
        with self._doc_log.open(encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("kind") == "tags":
                    doc = self._docs.get(rec["doc_id"])
                    if doc is not None:
                        doc.domain_tags = set(rec["domain_tags"])
                else:
                    doc = Document.from_record(rec)
                    self._docs[doc.doc_id] = doc

    def _append(self, record: dict) -> None:
        with self._doc_log.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            f.flush()
            os.fsync(f.fileno())

    # --- operations ---

    def ingest_document(self, record: Document) -> str:
        """Persist a document; returns its id. Not yet chunked or embedded."""
        if not record.body:
            raise EmptyBodyError(f"document {record.doc_id!r} has empty body")
        if not record.doc_id:
            raise ValueError("doc_id must be non-empty")
        with self._lock:
            if record.doc_id in self._docs:
                raise DuplicateIdError(record.doc_id)
            record.domain_tags = {normalize_tag(t) for t in record.domain_tags}
            self._append(record.to_record())
            self._docs[record.doc_id] = record
        return record.doc_id

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise UnknownDocError(doc_id) from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def doc_ids(self) -> list[str]:
        return list(self._docs)

    def documents(self) -> list[Document]:
        return list(self._docs.values())

    def tag_domains(self, doc_id: str, tags: Iterable[str]) -> Document:
        """Replace a document's tag set. Tags must come from the vocabulary."""
        tags = {normalize_tag(t) for t in tags}
        if not tags:
            raise UnknownTagError("empty")
        unknown = tags - set(self.vocabulary)
        if unknown:
            raise UnknownTagError(sorted(unknown)[0])
        with self._lock:
            doc = self.get(doc_id)
            doc.domain_tags = tags
            self._append({"kind": "tags", "doc_id": doc_id,
                          "domain_tags": sorted(tags)})
        return doc

    def chunk_document(self, doc_id: str,
                       window_tokens: int = DEFAULT_WINDOW_TOKENS,
                       overlap_tokens: int = DEFAULT_OVERLAP_TOKENS) -> list[Chunk]:
        """Tile the body into token windows with the configured overlap.

        Stride is window - overlap; the final chunk may be short. Chunk ids
        derive from doc id and token span, so re-chunking with identical
        parameters reproduces identical chunks.
        """
        if not (0 <= overlap_tokens < window_tokens):
            raise BadWindowError(
                f"need 0 <= overlap ({overlap_tokens}) < window ({window_tokens})")
        doc = self.get(doc_id)
        spans = word_tokens(doc.body)
        n = len(spans)
        if n == 0:
            return []
        stride = window_tokens - overlap_tokens
        chunks = []
        for start in range(0, n, stride):
            end = min(start + window_tokens, n)
            char_start = spans[start][0]
            char_end = spans[end - 1][1]
            chunks.append(Chunk(
                chunk_id=f"{doc_id}:{start}-{end}",
                doc_id=doc_id,
                text=doc.body[char_start:char_end],
                token_span=(start, end),
                domain_tags=set(doc.domain_tags),
            ))
            if end == n:
                break
        return chunks

    def load_corpus_lines(self, lines: Iterable[str]) -> tuple[int, list[str]]:
        """Ingest JSONL lines; returns (ingested, diagnostics)."""
        ingested = 0
        diagnostics = []
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc = Document.from_record(rec)
                self.ingest_document(doc)
            except (json.JSONDecodeError, KeyError, TypeError,
                    DuplicateIdError, EmptyBodyError, ValueError) as e:
                diagnostics.append(f"line {lineno}: {type(e).__name__}: {e}")
                continue
            ingested += 1
        return ingested, diagnostics

    def load_corpus_file(self, path: os.PathLike | str, format: str = "jsonl") -> int:
        """Ingest a JSONL corpus file; malformed lines are reported and skipped."""
        if format != "jsonl":
            raise CorpusFormatError(f"unsupported format: {format!r}")
        path = Path(path)
        if not path.exists():
            raise OSError(f"no such file: {path}")
        with path.open(encoding="utf-8") as f:
            ingested, diagnostics = self.load_corpus_lines(f)
        for diag in diagnostics:
            logger.warning("%s: %s", path, diag)
        if diagnostics and ingested == 0:
            raise CorpusFormatError(
                f"{path}: all {len(diagnostics)} lines malformed; first: {diagnostics[0]}")
        return ingested
