"""Gradient extraction and finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import ModelParams

LossFn = Callable[[dict[str, Tensor]], Tensor]


def value_and_grad(params: ModelParams, loss_fn: LossFn) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``loss_fn`` on differentiable leaves and return (loss, gradients).

    Parameters that do not participate in the loss get an all-zero gradient.
    """
    leaves = params.leaves()
    loss = loss_fn(leaves)
    ag.backward(loss)
    grads = {}
    for name, leaf in leaves.items():
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(loss.data), grads


def _sample_coordinates(params: ModelParams, n_coords: int, rng) -> list[tuple[str, int]]:
    names = list(params.tensors)
    sizes = np.array([params[n].size for n in names])
    # every tensor gets at least one coordinate; the rest are spread by size
    counts = np.ones(len(names), dtype=int)
    extra = max(0, n_coords - len(names))
    counts += np.floor(extra * sizes / sizes.sum()).astype(int)
    short = n_coords - counts.sum()
    for i in np.argsort(-sizes)[: max(0, short)]:
        counts[i] += 1
    coords = []
    for name, size, count in zip(names, sizes, counts):
        flat = rng.choice(size, size=min(count, size), replace=False)
        coords.extend((name, int(i)) for i in flat)
    return coords


def grad_check(
    loss_fn: LossFn,
    params: ModelParams,
    eps: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    Runs in float64. The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. The floor
    keeps coordinates whose true gradient is zero (e.g. attention key biases)
    from turning central-difference roundoff, about ``1e-16 * |loss| / eps``,
    into a large relative error; below it the check is absolute.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    p64 = params.astype(np.float64)
    loss, grads = value_and_grad(p64, loss_fn)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")

    def evaluate() -> float:
        value = float(loss_fn(p64.constants()).data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value}")
        return value

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, i in _sample_coordinates(p64, n_coords, rng):
        flat = p64.tensors[name].reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        up = evaluate()
        flat[i] = old - eps
        down = evaluate()
        flat[i] = old
        numeric = (up - down) / (2 * eps)
        analytic = grads[name].reshape(-1)[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
