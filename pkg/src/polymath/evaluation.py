"""Ablation evaluation: four system conditions over MCQ science benchmarks.

Conditions: vanilla_llm (direct prompt), vanilla_rag (top-k hybrid chunks as
context), agent_v1 and agent_v2 (full retrieval pipeline with the MCQ flag).
Adapters normalize several benchmark file schemas onto one item shape; the
report path writes CSV + Markdown matrices, a per-item JSONL consumed by the
causal module, and accuracy bar charts.
"""

from __future__ import annotations

import json
import logging
import random
import re
import string
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .agents import RetrievalAgent, RetrievalConfig
from .errors import BenchmarkFormatError, EmptyRunError, PolymathError
from .gateway import ChatBackend, ChatMessage, DecodeParams, complete_chat, embed_text
from .index import HybridIndex

logger = logging.getLogger(__name__)

CONDITIONS = ("vanilla_llm", "vanilla_rag", "agent_v1", "agent_v2")
FORMATS = ("litqa2", "gpqa", "wmdp", "hle", "xdisc")
UNSURE_CHOICE = "Insufficient information to answer the question"

MCQ_SYSTEM = "You answer multiple-choice science questions."
RAG_PROMPT = ("Context:\n{context}\n\nQuestion: {question}\nOptions:\n{options}\n"
              "Answer with the letter only.")
DIRECT_PROMPT = ("Question: {question}\nOptions:\n{options}\n"
                 "Answer with the letter only.")


@dataclass
class BenchmarkItem:
    item_id: str
    question: str
    choices: list[str]
    gold_index: int
    allows_unsure: bool = False
    domain_hint: Optional[list[str]] = None

    def validate(self) -> None:
        if not (2 <= len(self.choices) <= 26):
            raise BenchmarkFormatError(
                f"item {self.item_id}: needs 2..26 choices, got {len(self.choices)}")
        if not (0 <= self.gold_index < len(self.choices)):
            raise BenchmarkFormatError(
                f"item {self.item_id}: gold_index {self.gold_index} out of range")


@dataclass
class AblationConfig:
    condition: str
    backend_name: str = "mock"
    retrieval_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition: {self.condition!r}")


@dataclass
class RunRecord:
    item_id: str
    condition: str
    backend: str
    chosen_index: Optional[int]
    correct: bool
    abstained: bool
    latency_s: float
    answer_text: str = ""
    benchmark: str = ""

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "benchmark": self.benchmark,
            "condition": self.condition,
            "backend": self.backend,
            "chosen_index": self.chosen_index,
            "correct": self.correct,
            "abstained": self.abstained,
            "latency_s": self.latency_s,
            "answer_text": self.answer_text,
        }


def _letter_index(letter: str) -> int:
    return ord(letter.upper()) - ord("A")


def _shuffled_choices(item_id: str, gold: str, others: list[str],
                      unsure: bool) -> tuple[list[str], int]:
    """Deterministic per-item shuffle so choice order is stable across runs."""
    choices = [gold] + list(others)
    rng = random.Random(f"choices:{item_id}")
    rng.shuffle(choices)
    if unsure:
        choices.append(UNSURE_CHOICE)
    return choices, choices.index(gold)


def _jsonl_rows(path: Path):
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise BenchmarkFormatError(f"{path}:{lineno}: bad JSON: {e}") from e


def load_benchmark(path, format_id: str) -> list[BenchmarkItem]:
    """Normalize one benchmark file onto BenchmarkItem via its adapter."""
    if format_id not in FORMATS:
        raise BenchmarkFormatError(f"unknown format: {format_id!r}")
    path = Path(path)
    loader = {
        "litqa2": _load_litqa2,
        "gpqa": _load_gpqa,
        "wmdp": _load_wmdp,
        "hle": _load_hle,
        "xdisc": _load_xdisc,
    }[format_id]
    items = loader(path)
    for item in items:
        item.validate()
    return items


def _load_xdisc(path: Path) -> list[BenchmarkItem]:
    """Native schema: the cross-disciplinary benchmark's own JSONL layout."""
    items = []
    for lineno, row in _jsonl_rows(path):
        try:
            gold = row.get("gold_index")
            if gold is None:
                gold = _letter_index(str(row["gold"]))
            items.append(BenchmarkItem(
                item_id=str(row["item_id"]),
                question=str(row["question"]),
                choices=[str(c) for c in row["choices"]],
                gold_index=int(gold),
                domain_hint=row.get("domains"),
            ))
        except (KeyError, ValueError, TypeError) as e:
            raise BenchmarkFormatError(f"{path}:{lineno}: {e!r}") from e
    return items


def _load_litqa2(path: Path) -> list[BenchmarkItem]:
    """JSONL with ideal + distractors; an unsure option is always appended."""
    items = []
    for lineno, row in _jsonl_rows(path):
        try:
            item_id = str(row.get("id") or row.get("item_id") or f"litqa2-{lineno}")
            choices, gold_index = _shuffled_choices(
                item_id, str(row["ideal"]),
                [str(d) for d in row["distractors"]], unsure=True)
            items.append(BenchmarkItem(
                item_id=item_id,
                question=str(row["question"]),
                choices=choices,
                gold_index=gold_index,
                allows_unsure=True,
            ))
        except (KeyError, ValueError, TypeError) as e:
            raise BenchmarkFormatError(f"{path}:{lineno}: {e!r}") from e
    return items


def _load_gpqa(path: Path) -> list[BenchmarkItem]:
    """CSV with Question, Correct Answer, Incorrect Answer 1..3."""
    import csv

    items = []
    with path.open(encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), 1):
            try:
                item_id = str(row.get("Record ID") or f"gpqa-{lineno}")
                wrong = [row[f"Incorrect Answer {i}"] for i in (1, 2, 3)
                         if row.get(f"Incorrect Answer {i}")]
                choices, gold_index = _shuffled_choices(
                    item_id, row["Correct Answer"], wrong, unsure=False)
                items.append(BenchmarkItem(
                    item_id=item_id,
                    question=row["Question"],
                    choices=choices,
                    gold_index=gold_index,
                ))
            except (KeyError, ValueError, TypeError) as e:
                raise BenchmarkFormatError(f"{path}:{lineno}: {e!r}") from e
    return items


def _load_wmdp(path: Path) -> list[BenchmarkItem]:
    """JSONL with choices list and integer answer index."""
    items = []
    for lineno, row in _jsonl_rows(path):
        try:
            items.append(BenchmarkItem(
                item_id=str(row.get("id") or f"wmdp-{lineno}"),
                question=str(row["question"]),
                choices=[str(c) for c in row["choices"]],
                gold_index=int(row["answer"]),
            ))
        except (KeyError, ValueError, TypeError) as e:
            raise BenchmarkFormatError(f"{path}:{lineno}: {e!r}") from e
    return items


def _load_hle(path: Path) -> list[BenchmarkItem]:
    """JSONL with choices list and letter answer."""
    items = []
    for lineno, row in _jsonl_rows(path):
        try:
            items.append(BenchmarkItem(
                item_id=str(row.get("id") or f"hle-{lineno}"),
                question=str(row["question"]),
                choices=[str(c) for c in row["choices"]],
                gold_index=_letter_index(str(row["answer"])),
            ))
        except (KeyError, ValueError, TypeError) as e:
            raise BenchmarkFormatError(f"{path}:{lineno}: {e!r}") from e
    return items


# --- choice extraction ---

_LETTER_ONLY = re.compile(r"^\s*\(?([A-Za-z])[).:\]]?\s*$")
_LETTER_PREFIX = re.compile(r"^\s*\(?([A-Za-z])[).:\]]\s+")


def _normalize_answer(text: str) -> str:
    return "".join(ch for ch in text.casefold()
                   if ch not in string.punctuation).strip()


def extract_choice(answer_text: str, choices: Sequence[str]) -> Optional[int]:
    """Map free-form answer text onto a choice index; None means abstain.

    Match order: bare letter or "X)" prefix, then normalized equality with a
    choice, then unique-substring containment. Total and deterministic.
    """
    if not answer_text:
        return None
    n = len(choices)
    m = _LETTER_ONLY.match(answer_text) or _LETTER_PREFIX.match(answer_text)
    if m:
        idx = _letter_index(m.group(1))
        if 0 <= idx < n:
            return idx
    normalized = _normalize_answer(answer_text)
    if not normalized:
        return None
    norm_choices = [_normalize_answer(c) for c in choices]
    for i, nc in enumerate(norm_choices):
        if nc and nc == normalized:
            return i
    contained = [i for i, nc in enumerate(norm_choices) if nc and nc in normalized]
    if len(contained) == 1:
        return contained[0]
    return None


# --- the runner ---

class EvalRunner:
    def __init__(self, backends: dict[str, ChatBackend], index: HybridIndex,
                 embedder, vocabulary: Sequence[str],
                 params: Optional[DecodeParams] = None):
        self.backends = backends
        self.index = index
        self.embedder = embedder
        self.vocabulary = list(vocabulary)
        self.params = params or DecodeParams()

    def _options_block(self, item: BenchmarkItem) -> str:
        return "\n".join(f"{chr(ord('A') + i)}) {c}"
                         for i, c in enumerate(item.choices))

    def _ask_direct(self, backend: ChatBackend, item: BenchmarkItem) -> str:
        prompt = DIRECT_PROMPT.format(question=item.question,
                                      options=self._options_block(item))
        return complete_chat(backend,
                             [ChatMessage("system", MCQ_SYSTEM),
                              ChatMessage("user", prompt)],
                             self.params, hint="vanilla_mcq")

    def _ask_rag(self, backend: ChatBackend, item: BenchmarkItem, k: int) -> str:
        query_vec = embed_text(self.embedder, [item.question])[0]
        hits = self.index.hybrid_search(item.question, query_vec, k=k)
        context = "\n\n".join(self.index.get_chunk(h.chunk_id).text for h in hits)
        prompt = RAG_PROMPT.format(context=context, question=item.question,
                                   options=self._options_block(item))
        return complete_chat(backend,
                             [ChatMessage("system", MCQ_SYSTEM),
                              ChatMessage("user", prompt)],
                             self.params, hint="vanilla_rag_mcq")

    def _ask_agent(self, backend: ChatBackend, item: BenchmarkItem,
                   variant: str, k: int) -> str:
        agent = RetrievalAgent(self.index, backend, self.embedder,
                               self.vocabulary)
        answer = agent.answer_question(
            item.question, variant=variant,
            config=RetrievalConfig(per_tag_k=k, mcq_choices=item.choices,
                                   params=self.params))
        return answer.answer

    def run_condition(self, config: AblationConfig,
                      items: Sequence[BenchmarkItem],
                      limit: Optional[int] = None,
                      benchmark: str = "") -> list[RunRecord]:
        """One record per item; per-item failures become abstentions."""
        backend = self.backends[config.backend_name]
        if limit is not None:
            items = items[:limit]
        records = []
        for item in items:
            start = time.perf_counter()
            answer_text = ""
            chosen: Optional[int] = None
            try:
                if config.condition == "vanilla_llm":
                    answer_text = self._ask_direct(backend, item)
                elif config.condition == "vanilla_rag":
                    answer_text = self._ask_rag(backend, item, config.retrieval_k)
                else:
                    variant = config.condition.rsplit("_", 1)[1]
                    answer_text = self._ask_agent(backend, item, variant,
                                                  config.retrieval_k)
                chosen = extract_choice(answer_text, item.choices)
            except PolymathError as e:
                logger.warning("item %s failed under %s: %s",
                               item.item_id, config.condition, e)
            latency = time.perf_counter() - start
            abstained = chosen is None
            records.append(RunRecord(
                item_id=item.item_id,
                condition=config.condition,
                backend=config.backend_name,
                chosen_index=chosen,
                correct=(chosen == item.gold_index),
                abstained=abstained,
                latency_s=latency,
                answer_text=answer_text,
                benchmark=benchmark,
            ))
        return records


def score(records: Sequence[RunRecord]) -> dict:
    """accuracy = correct/n; precision = correct/answered (None if none answered)."""
    if not records:
        raise EmptyRunError("no records to score")
    n = len(records)
    n_answered = sum(1 for r in records if not r.abstained)
    correct = sum(1 for r in records if r.correct)
    return {
        "accuracy": correct / n,
        "precision": (correct / n_answered) if n_answered else None,
        "n": n,
        "n_answered": n_answered,
    }


def format_percent(fraction: Optional[float]) -> str:
    if fraction is None:
        return "null"
    return f"{fraction * 100:.1f}%"


def write_run_records(records: Sequence[RunRecord], path) -> Path:
    """Per-item JSONL: the causal module's input contract."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.to_record(), ensure_ascii=False) + "\n")
    return path


def emit_report(results: Sequence[dict], out_dir) -> dict[str, Path]:
    """Write CSV + Markdown matrices and an accuracy chart per benchmark.

    ``results`` rows: {benchmark, condition, backend, accuracy, precision,
    n, n_answered}. Percent cells use one decimal, e.g. "92.5%".
    """
    import pandas as pd

    if not results:
        raise EmptyRunError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(results))
    frame = frame.sort_values(["benchmark", "condition", "backend"])
    frame["accuracy_pct"] = frame["accuracy"].map(lambda v: f"{v * 100:.1f}")
    frame["precision_pct"] = frame["precision"].map(
        lambda v: "" if v is None or pd.isna(v) else f"{v * 100:.1f}")

    csv_path = out_dir / "report.csv"
    frame.to_csv(csv_path, index=False)

    md_lines = ["# Ablation results", ""]
    for benchmark, group in frame.groupby("benchmark"):
        md_lines.append(f"## {benchmark}")
        md_lines.append("")
        md_lines.append("| condition | backend | accuracy | precision | n |")
        md_lines.append("|---|---|---|---|---|")
        for _, row in group.iterrows():
            precision = row["precision"]
            md_lines.append(
                f"| {row['condition']} | {row['backend']} "
                f"| {format_percent(row['accuracy'])} "
                f"| {format_percent(None if pd.isna(precision) else precision)} "
                f"| {int(row['n'])} |")
        md_lines.append("")
    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(md_lines), encoding="utf-8")

    figures = _accuracy_figures(frame, out_dir)
    return {"csv": csv_path, "markdown": md_path, **figures}


def _accuracy_figures(frame, out_dir: Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    for benchmark, group in frame.groupby("benchmark"):
        pivot = group.pivot_table(index="condition", columns="backend",
                                  values="accuracy", sort=False)
        pivot = pivot.reindex([c for c in CONDITIONS if c in pivot.index])
        fig, ax = plt.subplots(figsize=(7, 4))
        (pivot * 100).plot.bar(ax=ax, rot=20)
        ax.set_ylabel("Accuracy (%)")
        ax.set_xlabel("")
        ax.set_title(f"{benchmark}: accuracy by condition")
        ax.set_ylim(0, 100)
        ax.legend(title="backend", fontsize=8)
        fig.tight_layout()
        fig_path = out_dir / f"accuracy_{benchmark}.png"
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)
        paths[f"figure_{benchmark}"] = fig_path
    return paths
