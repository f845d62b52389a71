"""Answer normalization, Exact Match, and top-k oracle accuracy."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .data import PredictionSet, Question

_ARTICLES = frozenset(("a", "an", "the"))


def _strip_punctuation(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize_answer(text: str) -> str:
    """Lowercase, drop Unicode punctuation, drop articles, collapse whitespace."""
    toks = _strip_punctuation(text.lower()).split()
    return " ".join(t for t in toks if t not in _ARTICLES)


def exact_match(prediction: str, gold_answers: Iterable[str]) -> bool:
    pred = normalize_answer(prediction)
    return any(pred == normalize_answer(g) for g in gold_answers)


def hit_rank(prediction: PredictionSet, question: Question) -> int | None:
    """1-based rank of the first exact-match candidate, or None."""
    gold = {normalize_answer(g) for g in question.gold_answers}
    for i, c in enumerate(prediction.candidates):
        if normalize_answer(c.span_text) in gold:
            return i + 1
    return None


def top_k_accuracy(predictions: Sequence[PredictionSet], questions: Sequence[Question], k: int) -> float:
    """Percentage of questions with an exact match among their top-k candidates.

    Questions without a prediction count as misses. A prediction whose
    question id is unknown is an error.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    known = {q.id for q in questions}
    by_id = {}
    for p in predictions:
        if p.question_id not in known:
            raise KeyError(f"prediction for unknown question {p.question_id!r}")
        by_id[p.question_id] = p
    if not questions:
        return 0.0
    hits = 0
    for q in questions:
        p = by_id.get(q.id)
        if p is None:
            continue
        rank = hit_rank(p, q)
        if rank is not None and rank <= k:
            hits += 1
    return 100.0 * hits / len(questions)


@dataclass
class OracleRow:
    dataset_label: str
    accuracies: dict[int, float] = field(default_factory=dict)

    def to_json(self, digits: int = 1) -> dict:
        return {str(k): round(v, digits) for k, v in self.accuracies.items()}

    def format(self) -> str:
        return format_rows([self])


def oracle_table(
    predictions: Sequence[PredictionSet],
    questions: Sequence[Question],
    ks: Sequence[int] = (1, 5, 10, 25),
    label: str = "",
) -> OracleRow:
    ks = list(ks)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError(f"ks must be strictly increasing, got {ks}")
    ranks = {}
    known = {q.id for q in questions}
    for p in predictions:
        if p.question_id not in known:
            raise KeyError(f"prediction for unknown question {p.question_id!r}")
    qmap = {q.id: q for q in questions}
    for p in predictions:
        ranks[p.question_id] = hit_rank(p, qmap[p.question_id])
    row = OracleRow(label)
    for k in ks:
        if k <= 0:
            raise ValueError(f"k must be positive, got {k}")
        hits = sum(1 for q in questions if ranks.get(q.id) is not None and ranks[q.id] <= k)
        row.accuracies[k] = 100.0 * hits / len(questions) if questions else 0.0
    return row


def format_rows(rows: Sequence[OracleRow]) -> str:
    ks = list(rows[0].accuracies)
    width = max(16, max(len(r.dataset_label) for r in rows) + 2)
    lines = ["".ljust(width) + "".join(f"Top-{k}".rjust(9) for k in ks)]
    for r in rows:
        lines.append(r.dataset_label.ljust(width) + "".join(f"{r.accuracies[k]:9.1f}" for k in ks))
    return "\n".join(lines)


def report_json(rows: Sequence[OracleRow]) -> str:
    return json.dumps({r.dataset_label: r.to_json() for r in rows}, indent=2)
