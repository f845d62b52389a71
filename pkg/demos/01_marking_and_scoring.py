"""
Marking a candidate span and scoring it
=======================================

The re-ranker reads each candidate answer in context: the passage is copied
with ``[A]`` and ``[/A]`` around the span, prefixed by the question, and the
[CLS] state is projected to a single score. Scores of one question's
candidates become probabilities with a softmax.
"""

import numpy as np

from spanrank.data import Passage, PredictionSet, Question, SpanCandidate
from spanrank.encoder import init_params
from spanrank.reranker import CandidateEncoder, RerankConfig, normalize_scores, rerank, score_batch
from spanrank.tokenizer import build_vocab, decode, words

question = Question("q0", "who led the union when it collapsed ?", ("Gorbachev",))
passage = Passage("p0", "The union collapsed under Gorbachev. Later it expanded under Brezhnev.")
vocab = build_vocab([passage.text, question.text], max_size=100)

# candidate spans, as token offsets into the passage
tokens = words(passage.text)
print(list(enumerate(tokens)))
candidates = [
    SpanCandidate(passage, 4, 5, "Gorbachev", 0.0),
    SpanCandidate(passage, 10, 11, "Brezhnev", 0.0),
    SpanCandidate(passage, 1, 2, "union", 0.0),
]

# the model input for each candidate: [CLS] question [SEP] marked passage
enc = CandidateEncoder(vocab, max_len=64)
inputs = [enc.encode(question, c) for c in candidates]
for c, x in zip(candidates, inputs):
    print(f"{c.span_text:>10}: {decode(vocab, x.ids)}")

# an untrained model; scores are arbitrary but the plumbing is complete
params = init_params(RerankConfig().encoder_config(vocab.size), seed=0)
scores = score_batch(params, inputs)
print("scores       ", np.round(scores, 4))
print("probabilities", np.round(normalize_scores(scores), 4))

# softmax is shift invariant, and equal scores give a uniform distribution
print(normalize_scores(scores + 100.0) - normalize_scores(scores))
print(normalize_scores([np.log(2), 0.0, 0.0]))

# re-ranking keeps every candidate; ties keep the reader's order
result = rerank(params, vocab, question, PredictionSet("q0", tuple(candidates)), k_test=2)
for c, p in result.ranked:
    print(f"rank {c.original_rank} -> {c.span_text:<10} p={p:.3f}")
print("untouched tail:", [c.span_text for c in result.tail])
