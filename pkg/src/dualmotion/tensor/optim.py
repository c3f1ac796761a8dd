"""Adaptive-moment optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the step was not applied."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"non-finite gradient for: {', '.join(self.names)}")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and the advanced state.

    Raises NonFiniteGradientError (leaving ``state`` untouched) if any gradient
    is NaN/inf.
    """
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    state = state or AdamState()
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    t = state.step + 1
    new_params = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_params[k] = p
            continue
        m = beta1 * state.m.get(k, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1 - beta2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        new_params[k] = (p - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    state.step = t
    return new_params, state


class Adam:
    """Stateful wrapper updating ``Tensor`` parameters in place."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        arrays = {k: self.params[k].data for k in grads}
        new, self.state = adam_step(arrays, grads, self.lr, *self.betas, self.eps, self.state)
        for k, arr in new.items():
            self.params[k].data = arr
