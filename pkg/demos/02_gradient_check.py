"""
Checking gradients against finite differences
=============================================

The encoder, reader and re-ranker are trained with a small reverse-mode
autograd written in numpy. Here the analytic gradient of the re-ranker loss
is compared with central differences on a tiny model, in double precision.
"""

import numpy as np

from spanrank.encoder import EncodedInput, EncoderConfig, collate, init_params
from spanrank.grad import grad_check, value_and_grad
from spanrank.reranker import group_loss
from spanrank.tokenizer import CLS, SEP

config = EncoderConfig(vocab_size=30, hidden=16, n_layers=1, n_heads=2, max_len=32)
params = init_params(config, seed=0)
rng = np.random.default_rng(0)

# two questions, three candidates each; the label is the positive's index
inputs = [EncodedInput(np.array([CLS, 7, 8, SEP, *rng.integers(6, 30, n)]), 4) for n in (5, 3, 6, 4, 7, 2)]
ids, mask = collate(inputs)
labels = np.array([0, 2])


def loss(t):
    return group_loss(t, config, ids, mask, labels, 3)


value, grads = value_and_grad(params, loss)
print(f"loss {value:.4f} (ln 3 = {np.log(3):.4f} if all scores were equal)")
print("largest gradient entry per tensor:", {k: round(float(np.abs(g).max()), 4) for k, g in list(grads.items())[:5]})

# worst relative error over 300 sampled coordinates, every tensor represented
print("max relative error", grad_check(loss, params, n_coords=300))

