"""Span-focused answer re-ranker.

Each (question, passage, span) candidate is encoded as
``[CLS] question [SEP] passage-with-[A]span[/A]``; the score is the dot product
of a learned vector with the [CLS] state, and a question's candidates are
normalized with a softmax. Training draws one positive and M-1 negatives from
the reader's own top predictions and maximizes the likelihood of the positive.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .data import PredictionSet, Question, RerankResult, SpanCandidate
from .encoder import ConfigError, EncodedInput, EncoderConfig, ModelParams, collate, encoder_forward, init_params
from .grad import value_and_grad
from .metrics import exact_match
from .optim import AdamHyper, AdamState, optimizer_step
from .tokenizer import A_END, A_START, CLS, SEP, Vocab, words

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarkedPassage:
    ids: tuple[int, ...]
    start_pos: int
    end_pos: int

    def strip(self) -> tuple[int, ...]:
        return self.ids[: self.start_pos] + self.ids[self.start_pos + 1 : self.end_pos] + self.ids[self.end_pos + 1 :]


@dataclass(frozen=True)
class TrainingGroup:
    question_id: str
    candidates: tuple[SpanCandidate, ...]
    label: int


@dataclass(frozen=True)
class RerankConfig:
    k_train: int = 100
    k_test: int = 5
    m: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    epochs: int = 4
    seed: int = 0
    max_len: int = 256
    hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_multiplier: int = 4

    def validate(self) -> None:
        if self.m < 2:
            raise ValueError(f"M must be >= 2, got {self.m}")
        if not 1 <= self.k_test <= self.k_train:
            raise ValueError(f"need 1 <= K_test <= K_train, got {self.k_test}, {self.k_train}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.hidden, self.n_layers, self.n_heads, self.ffn_multiplier, self.max_len)


def mark_span(passage_tokens, span_start: int, span_end: int) -> MarkedPassage:
    tokens = tuple(int(t) for t in passage_tokens)
    if not 0 <= span_start < span_end <= len(tokens):
        raise IndexError(f"span [{span_start}, {span_end}) out of bounds for {len(tokens)} tokens")
    ids = tokens[:span_start] + (A_START,) + tokens[span_start:span_end] + (A_END,) + tokens[span_end:]
    return MarkedPassage(ids, span_start, span_end + 1)


def build_input(question_tokens, marked: MarkedPassage, max_len: int, question_id: str = "") -> EncodedInput:
    """``[CLS] q [SEP] p̂`` truncated to ``max_len``.

    If the head of the passage does not contain both markers, the passage
    window is re-centred on the marked span.
    """
    q = [int(t) for t in question_tokens]
    if not q:
        raise ValueError("empty question")
    q = q[: max_len // 2]
    budget = max_len - 2 - len(q)
    p = marked.ids
    a, b = marked.start_pos, marked.end_pos
    start = 0
    if len(p) > budget and b >= budget:
        if b - a + 1 > budget:
            raise ValueError(
                f"question {question_id!r}: marked span of {b - a + 1} tokens exceeds passage budget {budget}"
            )
        start = (a + b) // 2 - budget // 2
        start = max(min(start, a), b - budget + 1)
        start = max(0, min(start, len(p) - budget))
    window = p[start : start + budget]
    ids = np.array([CLS, *q, SEP, *window], dtype=np.int64)
    return EncodedInput(ids, passage_pos=len(q) + 2, window_start=start, n_window=len(window))


def cls_scores(t, config: EncoderConfig, ids: np.ndarray, mask: np.ndarray):
    states = encoder_forward(t, config, ids, mask)
    return states[:, 0] @ t["w"]


def score_batch(params: ModelParams, inputs: list[EncodedInput], batch_size: int = 256) -> np.ndarray:
    t = params.constants()
    out = []
    for i in range(0, len(inputs), batch_size):
        ids, mask = collate(inputs[i : i + batch_size])
        out.append(cls_scores(t, params.config, ids, mask).data)
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def score(params: ModelParams, encoded: EncodedInput) -> float:
    return float(score_batch(params, [encoded])[0])


def normalize_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def split_pos_neg(prediction_set: PredictionSet, question: Question, k: int | None = None):
    cands = prediction_set.candidates if k is None else prediction_set.candidates[:k]
    pos, neg = [], []
    for c in cands:
        (pos if exact_match(c.span_text, question.gold_answers) else neg).append(c)
    return pos, neg


def sample_training_group(positives, negatives, m: int, rng: np.random.Generator, question_id: str = ""):
    """One positive plus M-1 negatives, shuffled. Returns None when no group can
    be formed (no positive, or no negative to draw from)."""
    if not positives or not negatives:
        return None
    pos = positives[rng.integers(len(positives))]
    replace_ = len(negatives) < m - 1
    idx = rng.choice(len(negatives), size=m - 1, replace=replace_)
    group = [pos] + [negatives[i] for i in idx]
    order = rng.permutation(m)
    cands = tuple(group[i] for i in order)
    label = int(np.flatnonzero(order == 0)[0])
    return TrainingGroup(question_id, cands, label)


class CandidateEncoder:
    """Caches tokenization of questions and passages for one vocabulary."""

    def __init__(self, vocab: Vocab, max_len: int):
        self.vocab = vocab
        self.max_len = max_len
        self._passages: dict[str, np.ndarray] = {}
        self._questions: dict[str, np.ndarray] = {}

    def question_ids(self, question: Question) -> np.ndarray:
        ids = self._questions.get(question.id)
        if ids is None:
            ids = self._questions[question.id] = self.vocab.ids(words(question.text))
        return ids

    def passage_ids(self, text: str) -> np.ndarray:
        ids = self._passages.get(text)
        if ids is None:
            ids = self._passages[text] = self.vocab.ids(words(text))
        return ids

    def encode(self, question: Question, cand: SpanCandidate) -> EncodedInput:
        marked = mark_span(self.passage_ids(cand.passage.text), cand.span_start, cand.span_end)
        return build_input(self.question_ids(question), marked, self.max_len, question.id)


def warm_start(source: ModelParams, config: EncoderConfig, seed: int) -> ModelParams:
    """Encoder weights copied from ``source`` (e.g. a trained reader) under a fresh ``w``.

    Plays the part of starting from a pretrained encoder; heads other than
    ``w`` in ``source`` are dropped.
    """
    if source.config != config:
        raise ConfigError(f"cannot warm-start: source encoder {source.config} differs from {config}")
    fresh = init_params(config, seed)
    return ModelParams(config, {k: np.array(fresh[k] if k == "w" else source[k]) for k in fresh})


def group_loss(t, config: EncoderConfig, ids, mask, labels: np.ndarray, m: int):
    """Mean over groups of -log p(positive), p the softmax over each group's scores."""
    scores = cls_scores(t, config, ids, mask).reshape(len(labels), m)
    logp = ag.log_softmax(scores)
    return -(logp[np.arange(len(labels)), labels].mean())


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float] = field(default_factory=list)
    n_trainable: int = 0
    n_skipped: int = 0


def train(
    questions: list[Question],
    prediction_sets: list[PredictionSet],
    vocab: Vocab,
    config: RerankConfig,
    init: ModelParams | None = None,
) -> TrainResult:
    config.validate()
    enc = CandidateEncoder(vocab, config.max_len)
    qmap = {q.id: q for q in questions}
    pools = []
    skipped = 0
    for ps in prediction_sets:
        q = qmap.get(ps.question_id)
        if q is None:
            continue
        pos, neg = split_pos_neg(ps, q, config.k_train)
        if pos and neg:
            pools.append((q, pos, neg))
        else:
            skipped += 1
    if not pools:
        raise TrainingError("no trainable questions: none has both a positive and a negative in top-K_train")
    log.info("reranker: %d trainable questions, %d skipped", len(pools), skipped)

    rng = np.random.default_rng(config.seed)
    enc_config = config.encoder_config(vocab.size)
    if init is not None and init.config != enc_config:
        raise ConfigError(f"initial params {init.config} do not match {enc_config}")
    params = init.copy() if init is not None else init_params(enc_config, config.seed)
    state = AdamState()
    hyper = AdamHyper(lr=config.lr)
    history = []
    cache: dict[tuple[str, int, int, str], EncodedInput] = {}

    def encoded(q, c):
        key = (q.id, c.span_start, c.span_end, c.passage.id)
        x = cache.get(key)
        if x is None:
            x = cache[key] = enc.encode(q, c)
        return x

    for epoch in range(config.epochs):
        t0 = time.time()
        order = rng.permutation(len(pools))
        losses = []
        for b in range(0, len(order), config.batch_size):
            inputs, labels = [], []
            for i in order[b : b + config.batch_size]:
                q, pos, neg = pools[i]
                group = sample_training_group(pos, neg, config.m, rng, q.id)
                inputs.extend(encoded(q, c) for c in group.candidates)
                labels.append(group.label)
            ids, mask = collate(inputs)
            labels = np.array(labels)
            loss, grads = value_and_grad(
                params, lambda t: group_loss(t, params.config, ids, mask, labels, config.m)
            )
            params, state = optimizer_step(params, grads, state, hyper)
            losses.append(loss * len(labels))
        history.append(float(np.sum(losses) / len(pools)))
        log.info("reranker epoch %d: loss %.4f (%.1fs)", epoch + 1, history[-1], time.time() - t0)
    return TrainResult(params, history, len(pools), skipped)


def rerank(
    params: ModelParams,
    vocab: Vocab,
    question: Question,
    prediction_set: PredictionSet,
    k_test: int = 5,
    encoder: CandidateEncoder | None = None,
) -> RerankResult:
    """Re-score the top ``k_test`` candidates; ties keep the original order.

    Candidates past ``k_test`` follow unchanged.
    """
    if not prediction_set.candidates:
        raise ValueError(f"question {prediction_set.question_id!r} has no candidates")
    enc = encoder or CandidateEncoder(vocab, params.config.max_len)
    cands = [
        c if c.original_rank is not None else replace(c, original_rank=i + 1)
        for i, c in enumerate(prediction_set.candidates)
    ]
    head, tail = cands[:k_test], cands[k_test:]
    probs = normalize_scores(score_batch(params, [enc.encode(question, c) for c in head]))
    order = sorted(range(len(head)), key=lambda i: (-probs[i], i))
    return RerankResult(prediction_set.question_id, tuple((head[i], float(probs[i])) for i in order), tuple(tail))


def rerank_all(params, vocab, questions, prediction_sets, k_test: int = 5) -> list[RerankResult]:
    qmap = {q.id: q for q in questions}
    enc = CandidateEncoder(vocab, params.config.max_len)
    return [rerank(params, vocab, qmap[ps.question_id], ps, k_test, enc) for ps in prediction_sets if ps.candidates]
