"""Record types and JSONL ingestion for questions, passages and predictions."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .tokenizer import tokenize

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...]

    def to_json(self) -> dict:
        return {"id": self.id, "text": self.text, "gold_answers": list(self.gold_answers)}


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    title: str | None = None

    def to_json(self) -> dict:
        d = {"id": self.id, "text": self.text}
        if self.title is not None:
            d["title"] = self.title
        return d


@dataclass(frozen=True)
class SpanCandidate:
    passage: Passage
    span_start: int
    span_end: int
    span_text: str
    model_score: float
    original_rank: int | None = None

    def to_json(self) -> dict:
        d = {
            "passage_id": self.passage.id,
            "passage_text": self.passage.text,
            "span_start": self.span_start,
            "span_end": self.span_end,
            "span_text": self.span_text,
            "score": self.model_score,
        }
        if self.original_rank is not None:
            d["original_rank"] = self.original_rank
        return d


@dataclass(frozen=True)
class PredictionSet:
    question_id: str
    candidates: tuple[SpanCandidate, ...]

    def top(self, k: int) -> tuple[SpanCandidate, ...]:
        return self.candidates[:k]

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "candidates": [c.to_json() for c in self.candidates]}


@dataclass(frozen=True)
class RerankResult:
    question_id: str
    ranked: tuple[tuple[SpanCandidate, float], ...]
    tail: tuple[SpanCandidate, ...] = ()

    def to_prediction_set(self) -> PredictionSet:
        """Reranked block with probabilities as scores, then the tail at score 0."""
        cands = [
            SpanCandidate(c.passage, c.span_start, c.span_end, c.span_text, float(p), c.original_rank)
            for c, p in self.ranked
        ]
        cands += [
            SpanCandidate(c.passage, c.span_start, c.span_end, c.span_text, 0.0, c.original_rank) for c in self.tail
        ]
        return PredictionSet(self.question_id, tuple(cands))


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def write_jsonl(path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            obj = r.to_json() if hasattr(r, "to_json") else r
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_questions(path) -> list[Question]:
    out = []
    seen = set()
    for lineno, r in _read_jsonl(path):
        try:
            qid, text, gold = str(r["id"]), r["text"], r["gold_answers"]
        except KeyError as e:
            raise DataError(f"{path}:{lineno}: missing key {e.args[0]!r}") from None
        if not isinstance(gold, list) or not gold:
            raise DataError(f"{path}:{lineno}: question {qid!r} has empty gold_answers")
        if not text:
            raise DataError(f"{path}:{lineno}: question {qid!r} has empty text")
        if qid in seen:
            raise DataError(f"{path}:{lineno}: duplicate question id {qid!r}")
        seen.add(qid)
        out.append(Question(qid, text, tuple(str(g) for g in gold)))
    return out


def load_corpus(path) -> dict[str, Passage]:
    corpus = {}
    for lineno, r in _read_jsonl(path):
        try:
            pid, text = str(r["id"]), r["text"]
        except KeyError as e:
            raise DataError(f"{path}:{lineno}: missing key {e.args[0]!r}") from None
        if not text:
            raise DataError(f"{path}:{lineno}: passage {pid!r} has empty text")
        if pid in corpus:
            raise DataError(f"{path}:{lineno}: duplicate passage id {pid!r}")
        corpus[pid] = Passage(pid, text, r.get("title"))
    return corpus


def load_retrieval(path) -> dict[str, list[str]]:
    """Per-question retrieved passage ids: ``{"question_id", "passage_ids"}`` per line."""
    return {str(r["question_id"]): [str(p) for p in r["passage_ids"]] for _, r in _read_jsonl(path)}


def load_predictions(path) -> list[PredictionSet]:
    """Load prediction sets, re-sorting candidates by descending score (stable).

    Spans are checked against the passage's token count. A ``span_text`` that
    does not match the tokenized span is logged, not rejected.
    """
    out = []
    tok_cache: dict[str, list] = {}
    for lineno, r in _read_jsonl(path):
        qid = str(r.get("question_id", ""))
        cands = []
        for i, c in enumerate(r.get("candidates", [])):
            try:
                text = c["passage_text"]
                start, end = int(c["span_start"]), int(c["span_end"])
                passage = Passage(str(c["passage_id"]), text, c.get("title"))
                cand = SpanCandidate(passage, start, end, c["span_text"], float(c["score"]), c.get("original_rank"))
            except KeyError as e:
                raise DataError(f"{path}:{lineno}: candidate {i} of {qid!r} missing key {e.args[0]!r}") from None
            toks = tok_cache.get(text)
            if toks is None:
                toks = tok_cache[text] = tokenize(text)
            if not 0 <= start < end <= len(toks):
                raise DataError(
                    f"{path}:{lineno}: question {qid!r} candidate {i}: span [{start}, {end}) "
                    f"out of bounds for {len(toks)} passage tokens"
                )
            surface = " ".join(t for t, _, _ in toks[start:end])
            if surface != " ".join(t for t, _, _ in tokenize(cand.span_text)):
                log.warning("question %r candidate %d: span_text %r does not match tokens %r",
                            qid, i, cand.span_text, surface)
            cands.append(cand)
        cands.sort(key=lambda c: -c.model_score)
        out.append(PredictionSet(qid, tuple(cands)))
    return out


@dataclass
class ValidationReport:
    questions_without_predictions: list[str] = field(default_factory=list)
    orphan_predictions: list[str] = field(default_factory=list)
    empty_predictions: list[str] = field(default_factory=list)
    candidate_counts: dict[str, int] = field(default_factory=dict)

    @property
    def issues(self) -> list[str]:
        out = [f"no predictions for question {q}" for q in self.questions_without_predictions]
        out += [f"prediction for unknown question {q}" for q in self.orphan_predictions]
        out += [f"question {q} has no candidates" for q in self.empty_predictions]
        return out


def validate_dataset(questions: Iterable[Question], predictions: Iterable[PredictionSet]) -> ValidationReport:
    qids = [q.id for q in questions]
    known = set(qids)
    report = ValidationReport()
    for p in predictions:
        report.candidate_counts[p.question_id] = len(p.candidates)
        if p.question_id not in known:
            report.orphan_predictions.append(p.question_id)
        elif not p.candidates:
            report.empty_predictions.append(p.question_id)
    report.questions_without_predictions = [q for q in qids if q not in report.candidate_counts]
    return report


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
