"""
How many candidates should the re-ranker see?
=============================================

Given a pipeline work directory (from ``spanrank pipeline`` or the previous
demo), re-rank the test predictions with different K_test and report top-1.
K_test = 1 reproduces the reader exactly; beyond the reader's top-5 there is
little left to recover.
"""

import sys
from pathlib import Path

from spanrank import metrics, reranker
from spanrank.checkpoint import load_checkpoint
from spanrank.data import load_predictions, load_questions
from spanrank.tokenizer import Vocab

work = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
vocab = Vocab.load(work / "vocab.json")
params, _ = load_checkpoint(work / "reranker.ckpt", expected_vocab_hash=vocab.hash())
questions = load_questions(work / "data" / "test.questions.jsonl")
predictions = load_predictions(work / "test.predictions.jsonl")

print("reader top-k:", {k: round(metrics.top_k_accuracy(predictions, questions, k), 1) for k in (1, 2, 5, 10, 20)})
for k in (1, 2, 5, 10, 20):
    out = [r.to_prediction_set() for r in reranker.rerank_all(params, vocab, questions, predictions, k)]
    print(f"K_test={k:>2}  EM@1 {metrics.top_k_accuracy(out, questions, 1):5.1f}")
