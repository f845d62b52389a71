from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ModelParams


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, hyper: AdamHyper = AdamHyper()
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for {name}")
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient shape {grads[name].shape} does not match {name} {p.shape}")
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        update = hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_p[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return ModelParams(params.config, new_p), AdamState(t, new_m, new_v)
