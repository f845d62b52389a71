"""Toy span-extractive reader: passage scoring plus start/end span heads.

The reader encodes ``[CLS] question [SEP] passage`` without span markers. Its
passage score is ``w . E`` on the [CLS] state, and per-token start/end logits
come from two linear heads, softmaxed over the passage positions only. It is
trained on one distantly supervised positive passage plus random non-matching
negatives per question, and emits the top-N (passage, span) pairs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .data import Passage, PredictionSet, Question, SpanCandidate
from .encoder import EncodedInput, EncoderConfig, ModelParams, collate, encoder_forward, init_params
from .grad import value_and_grad
from .metrics import normalize_answer
from .optim import AdamHyper, AdamState, optimizer_step
from .tokenizer import CLS, SEP, Vocab, tokenize, words

log = logging.getLogger(__name__)

HEADS = ("w", "start", "end")


@dataclass(frozen=True)
class ReaderConfig:
    n_neg: int = 7
    max_span_len: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    epochs: int = 3
    seed: int = 0
    max_len: int = 256
    hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_multiplier: int = 4

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.hidden, self.n_layers, self.n_heads, self.ffn_multiplier, self.max_len)


@dataclass(frozen=True)
class ReaderOutput:
    passage_score: float
    start_dist: np.ndarray
    end_dist: np.ndarray
    start_logp: np.ndarray
    end_logp: np.ndarray


def build_reader_input(question_tokens, passage_tokens, max_len: int) -> EncodedInput:
    """``[CLS] q [SEP] p``; overlong passages lose their tail."""
    p = [int(t) for t in passage_tokens]
    if not p:
        raise ValueError("empty passage")
    q = [int(t) for t in question_tokens][: max_len // 2]
    window = p[: max_len - 2 - len(q)]
    ids = np.array([CLS, *q, SEP, *window], dtype=np.int64)
    return EncodedInput(ids, passage_pos=len(q) + 2, window_start=0, n_window=len(window))


def passage_mask(inputs: list[EncodedInput], length: int) -> np.ndarray:
    pos = np.arange(length)[None, :]
    lo = np.array([x.passage_pos for x in inputs])[:, None]
    hi = lo + np.array([x.n_window for x in inputs])[:, None]
    return (pos >= lo) & (pos < hi)


def reader_tensors(t, config: EncoderConfig, ids, mask, pmask):
    """Passage scores (B,) and start/end log-probabilities (B, L) over passage positions."""
    states = encoder_forward(t, config, ids, mask)
    scores = states[:, 0] @ t["w"]
    start = ag.log_softmax(states @ t["start"], pmask)
    end = ag.log_softmax(states @ t["end"], pmask)
    return scores, start, end


def reader_forward(params: ModelParams, inputs: list[EncodedInput]) -> list[ReaderOutput]:
    ids, mask = collate(inputs)
    pmask = passage_mask(inputs, ids.shape[1])
    scores, start, end = reader_tensors(params.constants(), params.config, ids, mask, pmask)
    ls = np.where(pmask, start.data, -np.inf)
    le = np.where(pmask, end.data, -np.inf)
    ps, pe = np.exp(ls), np.exp(le)
    return [ReaderOutput(float(scores.data[i]), ps[i], pe[i], ls[i], le[i]) for i in range(len(inputs))]


def find_distant_spans(passage_text: str, gold_answers, max_span_len: int = 10, tokens=None) -> list[tuple[int, int]]:
    """All token spans (start, end exclusive) whose surface text exact-matches a gold answer."""
    tokens = tokenize(passage_text) if tokens is None else tokens
    gold = {normalize_answer(g) for g in gold_answers}
    gold.discard("")
    if not gold:
        return []
    norm_passage = normalize_answer(passage_text)
    if not any(g in norm_passage for g in gold):
        return []
    spans = []
    for s in range(len(tokens)):
        for e in range(s + 1, min(len(tokens), s + max_span_len) + 1):
            if normalize_answer(passage_text[tokens[s][1] : tokens[e - 1][2]]) in gold:
                spans.append((s, e))
    return spans


def reader_loss(t, config: EncoderConfig, ids, mask, pmask, n_group: int, span_rows, span_starts, span_ends, span_mask):
    """Negative log-likelihood of the passage-span joint for each example.

    Rows come in groups of ``n_group`` with the positive passage first. Gold
    spans are given as sequence positions (``span_ends`` inclusive) padded to
    a common count and masked by ``span_mask``.
    """
    scores, start, end = reader_tensors(t, config, ids, mask, pmask)
    n_ex = len(span_rows)
    passage_logp = ag.log_softmax(scores.reshape(n_ex, n_group))[:, 0]
    rows = span_rows[:, None] * np.ones_like(span_starts)
    joint = start[rows, span_starts] + end[rows, span_ends]
    span_logp = ag.logsumexp(joint, span_mask)
    return -((passage_logp + span_logp).mean())


@dataclass
class ReaderExample:
    question: Question
    positives: list[tuple[Passage, list[tuple[int, int]]]]
    q_ids: np.ndarray


@dataclass
class ReaderTrainResult:
    params: ModelParams
    loss_history: list[float] = field(default_factory=list)
    n_trainable: int = 0
    skipped: list[str] = field(default_factory=list)


def train_reader(
    questions: list[Question],
    corpus: dict[str, Passage],
    config: ReaderConfig,
    vocab: Vocab,
    retrieval: dict[str, list[str]] | None = None,
) -> ReaderTrainResult:
    """Train on distantly supervised positives and random non-matching negatives.

    Positives are searched among each question's retrieved passages when
    ``retrieval`` is given, else over the whole corpus.
    """
    if config.n_neg == 0:
        log.warning("n_neg=0: the passage-selection term contributes no loss")
    passage_list = list(corpus.values())
    tok_cache: dict[str, np.ndarray] = {}

    def pids(p: Passage) -> np.ndarray:
        x = tok_cache.get(p.id)
        if x is None:
            x = tok_cache[p.id] = vocab.ids(words(p.text))
        return x

    examples, skipped = [], []
    for q in questions:
        pool = [corpus[i] for i in retrieval.get(q.id, [])] if retrieval is not None else passage_list
        positives = []
        for p in pool:
            spans = find_distant_spans(p.text, q.gold_answers, config.max_span_len)
            if spans:
                positives.append((p, spans))
        if positives:
            examples.append(ReaderExample(q, positives, vocab.ids(words(q.text))))
        else:
            skipped.append(q.id)
    if skipped:
        log.warning("reader: %d questions have no passage containing a gold answer; skipped", len(skipped))
    if not examples:
        raise RuntimeError("no trainable reader examples")

    rng = np.random.default_rng(config.seed)
    params = init_params(config.encoder_config(vocab.size), config.seed, HEADS)
    state = AdamState()
    hyper = AdamHyper(lr=config.lr)
    n_group = 1 + config.n_neg
    history = []

    def draw_negatives(q: Question) -> list[Passage]:
        out = []
        while len(out) < config.n_neg:
            p = passage_list[rng.integers(len(passage_list))]
            if not find_distant_spans(p.text, q.gold_answers, config.max_span_len):
                out.append(p)
        return out

    for epoch in range(config.epochs):
        t0 = time.time()
        order = rng.permutation(len(examples))
        total, count = 0.0, 0
        for b in range(0, len(order), config.batch_size):
            inputs, rows, gold = [], [], []
            for i in order[b : b + config.batch_size]:
                ex = examples[i]
                pos, spans = ex.positives[rng.integers(len(ex.positives))]
                x = build_reader_input(ex.q_ids, pids(pos), config.max_len)
                kept = [
                    (x.passage_pos + s, x.passage_pos + e - 1) for s, e in spans if e <= x.n_window
                ]
                if not kept:
                    continue
                rows.append(len(inputs))
                gold.append(kept)
                inputs.append(x)
                inputs.extend(build_reader_input(ex.q_ids, pids(p), config.max_len) for p in draw_negatives(ex.question))
            if not rows:
                continue
            width = max(len(g) for g in gold)
            starts = np.zeros((len(gold), width), dtype=np.int64)
            ends = np.zeros((len(gold), width), dtype=np.int64)
            smask = np.zeros((len(gold), width), dtype=bool)
            for j, g in enumerate(gold):
                for k, (s, e) in enumerate(g):
                    starts[j, k], ends[j, k], smask[j, k] = s, e, True
            ids, mask = collate(inputs)
            pmask = passage_mask(inputs, ids.shape[1])
            row_idx = np.array(rows)
            loss, grads = value_and_grad(
                params,
                lambda t: reader_loss(t, params.config, ids, mask, pmask, n_group, row_idx, starts, ends, smask),
            )
            params, state = optimizer_step(params, grads, state, hyper)
            total += loss * len(rows)
            count += len(rows)
        history.append(total / max(count, 1))
        log.info("reader epoch %d: loss %.4f (%.1fs)", epoch + 1, history[-1], time.time() - t0)
    return ReaderTrainResult(params, history, len(examples), skipped)


def enumerate_spans(
    outputs: list[ReaderOutput],
    inputs: list[EncodedInput],
    passages: list[Passage],
    max_span_len: int,
) -> list[tuple[float, str, int, int, int]]:
    """Every valid (score, passage id, start, end, passage index) with scores
    ``log p_s + log p_st(start) + log p_e(end - 1)``."""
    scores = np.array([o.passage_score for o in outputs], dtype=np.float64)
    log_ps = scores - scores.max()
    log_ps = log_ps - np.log(np.exp(log_ps).sum())
    out = []
    for j, (o, x, p) in enumerate(zip(outputs, inputs, passages)):
        lo, n = x.passage_pos, x.n_window
        ls = o.start_logp[lo : lo + n].astype(np.float64)
        le = o.end_logp[lo : lo + n].astype(np.float64)
        # spans of length <= max_span_len: matrix over (start, end-inclusive)
        total = log_ps[j] + ls[:, None] + le[None, :]
        valid = np.triu(np.ones((n, n), dtype=bool)) & ~np.triu(np.ones((n, n), dtype=bool), max_span_len)
        s_idx, e_idx = np.nonzero(valid)
        for s, e in zip(s_idx.tolist(), e_idx.tolist()):
            out.append((float(total[s, e]), p.id, s + x.window_start, e + 1 + x.window_start, j))
    return out


def predict_top_n(
    params: ModelParams,
    vocab: Vocab,
    question: Question,
    passages: list[Passage],
    n: int,
    max_span_len: int = 10,
) -> PredictionSet:
    """Global top-``n`` (passage, span) pairs; ties by (passage id, start, end)."""
    if not passages:
        raise ValueError("no passages to read")
    if n < 1:
        raise ValueError("N must be >= 1")
    q_ids = vocab.ids(words(question.text))
    inputs = [build_reader_input(q_ids, vocab.ids(words(p.text)), params.config.max_len) for p in passages]
    outputs = reader_forward(params, inputs)
    spans = enumerate_spans(outputs, inputs, passages, max_span_len)
    spans.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    tok_cache = {}
    cands = []
    for score, _, s, e, j in spans[:n]:
        p = passages[j]
        toks = tok_cache.get(j)
        if toks is None:
            toks = tok_cache[j] = tokenize(p.text)
        cands.append(SpanCandidate(p, s, e, p.text[toks[s][1] : toks[e - 1][2]], score))
    return PredictionSet(question.id, tuple(cands))


def predict_all(
    params: ModelParams,
    vocab: Vocab,
    questions: list[Question],
    corpus: dict[str, Passage],
    retrieval: dict[str, list[str]],
    n: int,
    max_span_len: int = 10,
) -> list[PredictionSet]:
    out = []
    for q in questions:
        pids = retrieval.get(q.id, [])
        if not pids:
            out.append(PredictionSet(q.id, ()))
            continue
        out.append(predict_top_n(params, vocab, q, [corpus[i] for i in pids], n, max_span_len))
    return out
