"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Every differentiable operation returns a new
tensor that remembers its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks that record in reverse topological order.

Shapes are strict: elementwise binary operations accept equal shapes or a
scalar operand only. Anything else must go through :func:`expand` or
:meth:`Tensor.reshape` first.
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------ operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def expand(self, shape):
        return expand(self, shape)

    def square(self):
        return square(self)

    def exp(self):
        return exp(self)

    def backward(self):
        backward(self)


# ------------------------------------------------------------------ plumbing
def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(
            f"shape mismatch {a.shape} vs {b.shape}; broadcast explicitly with expand()"
        )
    return a, b


def _fit(g: np.ndarray, t: Tensor) -> np.ndarray:
    """Reduce a gradient back to operand ``t`` (scalar operands sum everything)."""
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


# -------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(
        a.data * b.data, (a, b), lambda g: (_fit(g * b.data, a), _fit(g * a.data, b))
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def bw(g):
        gb = g / b.data
        return _fit(gb, a), _fit(-gb * out, b)

    return _result(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data**p
    return _result(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a: Tensor) -> Tensor:
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# -------------------------------------------------------------------- shape
def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),)
    )


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy broadcasting rules)."""
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape)
    lead = len(shape) - a.ndim

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _result(out, (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _result(np.array(out), (a,), bw)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, tensors, bw)


# ------------------------------------------------------------------- linear
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched operands must share batch dims, or ``b`` is 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), bw)


def resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply fixed linear maps to the last two axes: ``rows @ x @ cols.T``."""
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    if x.shape[-2] != rows.shape[1] or x.shape[-1] != cols.shape[1]:
        raise ShapeError(f"resample maps {rows.shape}/{cols.shape} do not fit {x.shape}")
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return _result(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))


def l2_normalize(x: Tensor, axis: int = -1) -> tuple[Tensor, np.ndarray]:
    """Unit-normalize along ``axis``; zero vectors map to zero.

    Returns the normalized tensor and a boolean array flagging zero-norm rows.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    y = np.where(zero, 0.0, x.data / safe)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(zero, 0.0, (g - y * dot) / safe),)

    return _result(y.astype(x.dtype), (x,), bw), np.squeeze(zero, axis=axis)


# -------------------------------------------------------------- convolution
def _corr2d(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valid cross-correlation of x[B,C,H,W] with w[K,C,kh,kw]; also returns im2col."""
    B, C, H, W = x.shape
    K, _, kh, kw = w.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(K, -1).T
    out = out.reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d(x: Tensor, kernel: Tensor, padding: int | tuple[int, int] = 0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is [C,H,W] or [B,C,H,W]; ``kernel`` is [K,C,kh,kw] with odd sizes.
    Output spatial size is ``H + 2*padding - kh + 1``; ``padding`` may be a
    (rows, cols) pair.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] or [B,C,H,W] and [K,C,kh,kw]; got {x.shape}, {kernel.shape}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    K, C, kh, kw = kernel.shape
    if xd.shape[1] != C:
        raise ShapeError(f"conv2d channel mismatch: input has {xd.shape[1]}, kernel expects {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel sizes must be odd, got {kh}x{kw}")
    ph, pw = (padding, padding) if np.ndim(padding) == 0 else padding
    if ph < 0 or pw < 0:
        raise ValueError("padding must be >= 0")
    xp = _pad_hw(xd, ph, pw)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")
    out, cols = _corr2d(xp, kernel.data)
    if not kernel.requires_grad:
        cols = None

    def bw(g):
        g4 = g[None] if squeeze else g
        gk = None
        if kernel.requires_grad:
            g2 = g4.transpose(0, 2, 3, 1).reshape(-1, K)
            gk = (g2.T @ cols).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gfull, _ = _corr2d(_pad_hw(g4, kh - 1, kw - 1), np.ascontiguousarray(flipped))
            gfull = gfull[:, :, ph:ph + xd.shape[2], pw:pw + xd.shape[3]]
            gx = gfull[0] if squeeze else gfull
        return gx, gk

    return _result(out[0] if squeeze else out, (x, kernel), bw)


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)])


def conv3d(x: Tensor, kernel: Tensor, padding: tuple[int, int, int] = (1, 1, 1)) -> Tensor:
    """3-D cross-correlation of x[B,C,T,H,W] with kernel[K,C,kt,kh,kw]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 5 or kernel.ndim != 5 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv3d expects [B,C,T,H,W] and [K,C,kt,kh,kw]; got {x.shape}, {kernel.shape}")
    K, C, kt, kh, kw = kernel.shape
    pt, ph, pw = padding
    xl = np.pad(x.data, [(0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)]).transpose(0, 2, 3, 4, 1)
    B, Tp, Hp, Wp, _ = xl.shape
    To, Ho, Wo = Tp - kt + 1, Hp - kh + 1, Wp - kw + 1
    w = kernel.data
    offsets = [(a, b, c) for a in range(kt) for b in range(kh) for c in range(kw)]
    out = np.zeros((B, To, Ho, Wo, K), dtype=np.result_type(x.dtype, kernel.dtype))
    for a, b, c in offsets:
        out += xl[:, a:a + To, b:b + Ho, c:c + Wo, :] @ w[:, :, a, b, c].T
    result = np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))

    def bw(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1))
        g2 = gl.reshape(-1, K)
        gk = np.zeros_like(w) if kernel.requires_grad else None
        gxl = np.zeros_like(xl) if x.requires_grad else None
        for a, b, c in offsets:
            sl = (slice(None), slice(a, a + To), slice(b, b + Ho), slice(c, c + Wo))
            if gk is not None:
                gk[:, :, a, b, c] = (xl[sl].reshape(-1, C).T @ g2).T
            if gxl is not None:
                gxl[sl] += gl @ w[:, :, a, b, c]
        gx = None
        if gxl is not None:
            gx = gxl.transpose(0, 4, 1, 2, 3)[:, :, pt:pt + x.shape[2], ph:ph + x.shape[3], pw:pw + x.shape[4]]
            gx = np.ascontiguousarray(gx)
        return gx, gk

    return _result(result, (x, kernel), bw)


def conv_temporal(x: Tensor, kernel: Tensor) -> Tensor:
    """Causal per-channel temporal filtering evaluated at the last frame.

    ``x`` is [T,C,H,W] (or [B,T,C,H,W]); ``kernel`` is [C,kt] with ``kernel[:, k]``
    weighting the frame ``k`` steps before the most recent one.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim not in (4, 5) or kernel.ndim != 2:
        raise ShapeError(f"conv_temporal expects [T,C,H,W] and [C,kt]; got {x.shape}, {kernel.shape}")
    T, C = x.shape[-4], x.shape[-3]
    kt = kernel.shape[1]
    if kernel.shape[0] != C:
        raise ShapeError(f"conv_temporal channel mismatch: {C} vs {kernel.shape[0]}")
    if kt > T:
        raise ValueError(f"temporal kernel length {kt} exceeds sequence length {T}")
    kd = kernel.data

    def frame(k):
        return x.data[..., T - 1 - k, :, :, :]

    def weight(k):
        return kd[:, k, None, None]

    out = frame(0) * weight(0)
    for k in range(1, kt):
        out = out + frame(k) * weight(k)

    def bw(g):
        gk = None
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            lead = tuple(range(g.ndim - 3))
            for k in range(kt):
                gk[:, k] = (frame(k) * g).sum(axis=lead + (-2, -1))
        gx = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for k in range(kt):
                gx[..., T - 1 - k, :, :, :] = g * weight(k)
        return gx, gk

    return _result(out, (x, kernel), bw)


# ----------------------------------------------------------------- backward
def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    If ``params`` is given, returns a name -> gradient mapping where parameters
    not reachable from ``loss`` get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()
    }


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
