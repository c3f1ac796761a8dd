"""Stage II: motion graph, recurrent integration and the shared flow decoder.

Node features are the 256-channel energies at each of the N = (H/8)(W/8)
grid positions. Affinities are cosine similarities of a learned 64-d
projection, sharpened elementwise by ``exp(s * A0)`` and symmetrically
normalized. Energy is propagated as ``A @ E`` and merged with the previous
state by a separable convolutional GRU; every state is decoded to dense flow
by one shared decoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .first_order import POSITIVE_MIN
from .resize import bilinear_matrix
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

MAX_NODES = 4096
PROJ_DIM = 64
HIDDEN = 256
S_MIN, S_MAX = 1e-3, 10.0 - 1e-3


# ---------------------------------------------------------------- adjacency
class MotionGraph:
    """Learnable projection ``phi`` (256 -> 64) and scale ``s``."""

    def __init__(self, seed: int | None = 0, n_in: int = HIDDEN, d: int = PROJ_DIM, dtype=np.float64, s: float = 3.0):
        rng = np.random.default_rng(seed)
        self.phi = Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, d)).astype(dtype), requires_grad=True)
        self.s = Tensor(np.array(s, dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"phi": self.phi, "s": self.s}

    def clamp(self) -> None:
        self.s.data = np.clip(self.s.data, S_MIN, S_MAX)


def nodes_from_map(E: Tensor) -> Tensor:
    """[B, C, h, w] -> [B, N, C]."""
    B, C, h, w = E.shape
    return T.transpose(E.reshape(B, C, h * w), (0, 2, 1))


def map_from_nodes(X: Tensor, h: int, w: int) -> Tensor:
    B, N, C = X.shape
    return T.transpose(X, (0, 2, 1)).reshape(B, C, h, w)


def cosine_similarity(X: Tensor) -> tuple[Tensor, np.ndarray]:
    """Pairwise cosine similarities of rows of X [B, N, d]; zero rows give 0."""
    Xn, zero = T.l2_normalize(X, -1)
    return T.matmul(Xn, T.transpose(Xn, (0, 2, 1))), zero


def build_adjacency(X, phi, s) -> tuple[Tensor, np.ndarray]:
    """``A = D^-1/2 exp(s * A0) D^-1/2`` for node features X [B, N, C] (or [N, C]).

    ``phi`` is a [C, d] projection (``None`` for the identity). Returns A and a
    boolean [B, N] array marking zero-norm nodes, whose similarities are 0.
    """
    X = T.as_tensor(X)
    squeeze = X.ndim == 2
    if squeeze:
        X = X.reshape(1, *X.shape)
    B, N, _ = X.shape
    if N > MAX_NODES:
        raise ValueError(f"{N} graph nodes exceed the limit of {MAX_NODES}; downscale the input to at most 512x512 pixels")
    P = X if phi is None else T.matmul(X, T.as_tensor(phi))
    A0, zero = cosine_similarity(P)
    if zero.any():
        log.warning("zero-norm node features at %d positions; their similarities are set to 0", int(zero.sum()))
    s = T.as_tensor(s, X.dtype)
    Ex = T.exp(A0 * s.reshape(()))
    d = Ex.sum(axis=2)  # symmetric, so row sums equal column sums
    dinv = T.power(d, -0.5)
    A = Ex * dinv.reshape(B, N, 1).expand(Ex.shape) * dinv.reshape(B, 1, N).expand(Ex.shape)
    if squeeze:
        return A.reshape(N, N), zero[0]
    return A, zero


# ---------------------------------------------------------------------- GRU
def _conv_bias(x: Tensor, w: Tensor, b: Tensor, padding) -> Tensor:
    y = T.conv2d(x, w, padding)
    return y + b.reshape(1, -1, 1, 1).expand(y.shape)


class GatedUpdateUnit:
    """Separable convolutional GRU: a (1x3) pass followed by a (3x1) pass.

    Each pass has update (z), reset (r) and candidate (q) convolutions over
    ``[h, x]``. Two diagnostic switches exist for probing the gates:
    ``clamp_update`` pins z to a constant and ``candidate_passthrough``
    replaces the candidate by the input.
    """

    KERNELS = (((1, 3), (0, 1)), ((3, 1), (1, 0)))

    def __init__(self, seed: int | None = 0, hidden: int = HIDDEN, n_in: int = HIDDEN, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.params: dict[str, Tensor] = {}
        fan = hidden + n_in
        for p, ((kh, kw), _) in enumerate(self.KERNELS):
            for g in "zrq":
                std = np.sqrt(1.0 / (fan * kh * kw))
                w = rng.normal(0.0, std, (hidden, fan, kh, kw))
                self.params[f"{g}{p}.w"] = Tensor(w.astype(dtype), requires_grad=True)
                self.params[f"{g}{p}.b"] = Tensor(np.zeros(hidden, dtype), requires_grad=True)
        self.clamp_update: float | None = None
        self.candidate_passthrough = False

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        """One update of hidden state h [B, C, h, w] with input x of the same shape."""
        if x.shape != h.shape:
            raise ShapeError(f"GRU input {x.shape} and state {h.shape} differ")
        P = self.params
        for p, (_, pad) in enumerate(self.KERNELS):
            hx = T.concat([h, x], 1)
            # z and r share their input, so both gates come from one convolution
            wzr = T.concat([P[f"z{p}.w"], P[f"r{p}.w"]], 0)
            bzr = T.concat([P[f"z{p}.b"], P[f"r{p}.b"]], 0)
            zr = T.sigmoid(_conv_bias(hx, wzr, bzr, pad))
            C = self.hidden
            z = zr[:, :C]
            if self.clamp_update is not None:
                z = Tensor(np.full(h.shape, self.clamp_update, h.dtype))
            if self.candidate_passthrough:
                q = x
            else:
                r = zr[:, C:]
                q = T.tanh(_conv_bias(T.concat([r * h, x], 1), P[f"q{p}.w"], P[f"q{p}.b"], pad))
            h = (1.0 - z) * h + z * q
        return h


def propagate(A: Tensor, E: Tensor) -> Tensor:
    """``A @ E`` on the grid: A [B, N, N], E [B, C, h, w] -> [B, C, h, w]."""
    h, w = E.shape[-2:]
    return map_from_nodes(T.matmul(A, nodes_from_map(E)), h, w)


def integrate_step(A: Tensor, E: Tensor, gru: GatedUpdateUnit) -> Tensor:
    return gru(propagate(A, E), E)


# ------------------------------------------------------------------ decoder
class FlowDecoder:
    """Squared per-pixel normalization, then 1x1 residual blocks mapping 256 -> 2.

    ``E_hat = K2 * E^2 / (sum_c E^2 + sigma2^2)`` is computed over channels at
    each pixel, so the decoder is blind to the sign of E.
    """

    def __init__(self, seed: int | None = 0, n_in: int = HIDDEN, width: int = 128, n_blocks: int = 2,
                 dtype=np.float64, input_gain: float = 16.0):
        rng = np.random.default_rng(seed)

        def lin(fi, fo, gain=1.0):
            w = rng.normal(0.0, gain * np.sqrt(2.0 / fi), (fi, fo))
            return Tensor(w.astype(dtype), requires_grad=True), Tensor(np.zeros(fo, dtype), requires_grad=True)

        self.params: dict[str, Tensor] = {}
        # the normalized inputs sum to at most K2 across channels, hence the input gain
        self.params["in.w"], self.params["in.b"] = lin(n_in, width, input_gain)
        for i in range(n_blocks):
            self.params[f"res{i}.w"], self.params[f"res{i}.b"] = lin(width, width, 0.5)
        w, b = lin(width, 2, 0.1)
        self.params["out.w"], self.params["out.b"] = w, b
        self.params["K2"] = Tensor(np.array(1.0, dtype), requires_grad=True)
        self.params["sigma2"] = Tensor(np.array(0.05, dtype), requires_grad=True)
        self.n_blocks = n_blocks

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def clamp(self) -> None:
        for k in ("K2", "sigma2"):
            self.params[k].data = np.maximum(self.params[k].data, POSITIVE_MIN)

    def normalize(self, E: Tensor) -> Tensor:
        """Per-pixel squared normalization of E [B, C, h, w]."""
        P = self.params
        E2 = T.square(E)
        total = E2.sum(axis=1, keepdims=True).expand(E2.shape)
        return E2 * P["K2"].reshape(()) / (total + T.square(P["sigma2"]).reshape(()))

    def __call__(self, E, out_size: tuple[int, int] | None = None) -> Tensor:
        """Flow [B, 2, H, W] (channel 0 = u, 1 = v) from E [B, C, h, w]."""
        E = T.as_tensor(E)
        P = self.params
        B, C, h, w = E.shape
        x = T.transpose(self.normalize(E).reshape(B, C, h * w), (0, 2, 1))

        def affine(v, name):
            y = T.matmul(v, P[f"{name}.w"])
            return y + P[f"{name}.b"].expand(y.shape)

        x = T.relu(affine(x, "in"))
        for i in range(self.n_blocks):
            x = x + T.relu(affine(x, f"res{i}"))
        flow = T.transpose(affine(x, "out"), (0, 2, 1)).reshape(B, 2, h, w)
        if out_size is not None and out_size != (h, w):
            dt = flow.data.dtype
            flow = T.resample(flow, bilinear_matrix(h, out_size[0], dt), bilinear_matrix(w, out_size[1], dt))
        return flow


def decode_flow(E, decoder: FlowDecoder, out_size=None) -> Tensor:
    return decoder(E, out_size)


# -------------------------------------------------------------- full stage
@dataclass
class Stage2Output:
    flows: list  # F_1..F_K, each [B, 2, H, W]
    states: list  # E^1..E^K
    adjacency: Tensor  # A^K
    n_adjacency_builds: int


def stage2_forward(E_m: Tensor, graph: MotionGraph, gru: GatedUpdateUnit, decoder: FlowDecoder,
                   iterations: int = 4, out_size=None) -> Stage2Output:
    """Run the recurrent graph integration; A is rebuilt from the current state each iteration."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    E = T.as_tensor(E_m)
    h, w = E.shape[-2:]
    flows, states = [], []
    A = None
    for _ in range(iterations):
        A, _ = build_adjacency(nodes_from_map(E), graph.phi, graph.s)
        E = integrate_step(A, E, gru)
        states.append(E)
        flows.append(decoder(E, out_size))
    return Stage2Output(flows, states, A, iterations)
