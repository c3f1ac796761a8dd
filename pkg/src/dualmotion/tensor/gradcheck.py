"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, backward


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """d fn() / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def gradcheck(fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-4) -> dict[str, float]:
    """Relative error between analytic and numerical gradients, per parameter."""
    for p in params.values():
        p.grad = None
    analytic = backward(fn(), params)
    return {k: relative_error(analytic[k], numerical_gradient(fn, p, h)) for k, p in params.items()}


def directional_gradcheck(fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                          seed: int = 0) -> float:
    """Relative error of the analytic derivative along one random direction in all of ``params``.

    Costs two extra evaluations regardless of parameter count, so it suits
    large modules where the elementwise check is too slow.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    analytic = backward(fn(), params)
    dirs = {k: rng.standard_normal(p.data.shape) for k, p in params.items()}
    slope = sum(float((analytic[k] * dirs[k]).sum()) for k in params)
    base = {k: p.data.copy() for k, p in params.items()}

    def shifted(sign):
        for k, p in params.items():
            p.data = base[k] + sign * h * dirs[k]
        return float(fn().data)

    fp, fm = shifted(1.0), shifted(-1.0)
    for k, p in params.items():
        p.data = base[k]
    numeric = (fp - fm) / (2 * h)
    return abs(slope - numeric) / max(abs(slope), abs(numeric), 1e-12)
