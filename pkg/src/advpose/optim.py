"""Adaptive-moment gradient updates (Adam with bias correction)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, ShapeMismatch


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus hyperparameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name, p in store.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(store: ParamStore, grads: dict, state: AdamState) -> None:
    """One in-place update; parameters without a gradient entry are skipped.

    First step moves each parameter by -lr * g / (|g| + eps) thanks to bias
    correction; a zero gradient leaves the parameter unchanged while the
    moments decay.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in store.items():
        g = grads.get(p)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
