"""Higher-order motion channel and channel fusion.

A five-layer 3D CNN turns a 15-frame RGB clip into one "texture luminance"
stream, which is then analysed by its own motion-energy bank. The fusion layer
mixes first- and higher-order energies per pixel and renormalizes them.

Layer layout (widths 3 -> 16 -> 16 -> 16 -> 16 -> 1):

    h1 = relu(conv1(x) + b1)
    h  = h + relu(conv_k(h) + b_k)      k = 2, 3, 4   (residual)
    y  = conv5(h) + b5                  (linear readout)

Residual skips sit on the equal-width layers only, so all-zero weights and
biases give an all-zero output stream.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .first_order import (
    FIRST_ORDER_FRAMES,
    POSITIVE_MIN,
    MotionEnergyBank,
    divisive_normalize,
    midpoint_window,
    output_size,
)
from .tensor import ShapeError, Tensor
from .tensor.spectral import conv3d_same

HIGHER_ORDER_FRAMES = 15
WIDTHS = (3, 16, 16, 16, 16, 1)
N_LAYERS = 5


def hoc_window(seq):
    """The 15 frames centred on the sequence midpoint, from [.., T, ...] with T on axis 1."""
    nt = seq.shape[1]
    mid = nt // 2
    half = HIGHER_ORDER_FRAMES // 2
    if nt < HIGHER_ORDER_FRAMES or mid - half < 0 or mid + half >= nt:
        raise ValueError(f"higher-order channel needs >= {HIGHER_ORDER_FRAMES} frames around the midpoint, got {nt}")
    return seq[:, mid - half: mid + half + 1]


class HigherOrderChannel:
    """3D-CNN nonlinearity followed by an independent motion-energy bank."""

    def __init__(self, seed: int | None = 0, dtype=np.float64, bank_seed: int | None = None):
        rng = np.random.default_rng(seed)
        self.conv: list[tuple[Tensor, Tensor]] = []
        for i in range(N_LAYERS):
            cin, cout = WIDTHS[i], WIDTHS[i + 1]
            std = np.sqrt(2.0 / (cin * 27))
            if 1 <= i <= 3:
                std *= 0.5  # keep residual branches small at start
            w = rng.normal(0.0, std, (cout, cin, 3, 3, 3))
            self.conv.append((Tensor(w.astype(dtype), requires_grad=True),
                              Tensor(np.zeros(cout, dtype), requires_grad=True)))
        self.bank = MotionEnergyBank(seed=bank_seed if bank_seed is not None else (None if seed is None else seed + 1),
                                     dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.conv):
            out[f"conv{i + 1}.w"] = w
            out[f"conv{i + 1}.b"] = b
        out.update({f"bank.{k}": v for k, v in self.bank.parameters().items()})
        return out

    def clamp(self) -> None:
        self.bank.clamp()

    def nonlinear_stream(self, clip) -> Tensor:
        """[B, 15, 3, H, W] RGB clip -> [B, 15, H, W] single-channel stream."""
        clip = T.as_tensor(clip)
        if clip.ndim != 5 or clip.shape[2] != 3:
            raise ShapeError(f"higher-order channel expects [B, T, 3, H, W], got {clip.shape}")
        h = T.transpose(clip, (1, 3, 4, 0, 2))  # T, H, W, B, C
        for i, (w, b) in enumerate(self.conv):
            z = conv3d_same(h, w)
            z = z + b.expand(z.shape)
            if i == 0:
                h = T.relu(z)
            elif i < N_LAYERS - 1:
                h = h + T.relu(z)
            else:
                h = z
        return T.transpose(h.reshape(h.shape[:4]), (3, 0, 1, 2))

    def forward(self, seq_rgb) -> Tensor:
        """E2 [B, 256, H/8, W/8] from RGB sequences [B, T>=15, 3, H, W] (or [T, 3, H, W])."""
        seq_rgb = T.as_tensor(seq_rgb)
        if seq_rgb.ndim == 4:
            seq_rgb = seq_rgb.reshape(1, *seq_rgb.shape)
        if seq_rgb.ndim != 5 or seq_rgb.shape[2] != 3:
            raise ShapeError(f"hoc_forward expects [B, T, 3, H, W], got {seq_rgb.shape}")
        clip = hoc_window(seq_rgb)
        stream = self.nonlinear_stream(clip)
        H, W = stream.shape[-2:]
        # the window ends at the clip centre, the same instant the first-order channel labels
        window = midpoint_window(stream)
        return self.bank.forward(window, output_size(H, W))


def hoc_forward(channel: HigherOrderChannel, seq_rgb) -> Tensor:
    return channel.forward(seq_rgb)


class FusionLayer:
    """Per-pixel 1x1 mixing of [E1 | E2] (512 channels) down to 256, then Eq.-4 style normalization.

    Weights are kept nonnegative so the normalization denominator stays positive.
    """

    def __init__(self, n_units: int = 256, init: str = "average", dtype=np.float64):
        eye = np.eye(n_units)
        if init == "average":
            w = 0.5 * np.concatenate([eye, eye], axis=1)
        elif init == "identity":
            w = np.concatenate([eye, np.zeros_like(eye)], axis=1)
        else:
            raise ValueError(f"unknown fusion init {init!r}")
        self.W = Tensor(w.astype(dtype), requires_grad=True)
        self.K = Tensor(np.array(1.0, dtype), requires_grad=True)
        self.sigma = Tensor(np.array(0.05, dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "K": self.K, "sigma": self.sigma}

    def clamp(self) -> None:
        self.W.data = np.maximum(self.W.data, 0.0)
        self.K.data = np.maximum(self.K.data, POSITIVE_MIN)
        self.sigma.data = np.maximum(self.sigma.data, POSITIVE_MIN)

    def mix(self, E1, E2) -> Tensor:
        """The linear part only: W @ [E1; E2] per pixel."""
        E1, E2 = T.as_tensor(E1), T.as_tensor(E2)
        if E1.shape != E2.shape:
            raise ShapeError(f"fusion inputs differ in shape: {E1.shape} vs {E2.shape}")
        B, C, h, w = E1.shape
        if 2 * C != self.W.shape[1]:
            raise ShapeError(f"fusion expects {self.W.shape[1] // 2} channels per input, got {C}")
        x = T.transpose(T.concat([E1, E2], 1).reshape(B, 2 * C, h * w), (0, 2, 1))
        y = T.matmul(x, T.transpose(self.W, (1, 0)))
        return T.transpose(y, (0, 2, 1)).reshape(B, self.W.shape[0], h, w)

    def forward(self, E1, E2) -> Tensor:
        return divisive_normalize(self.mix(E1, E2), self.K, self.sigma)


def fuse_channels(E1, E2, fusion: FusionLayer) -> Tensor:
    return fusion.forward(E1, E2)


__all__ = [
    "FIRST_ORDER_FRAMES",
    "HIGHER_ORDER_FRAMES",
    "FusionLayer",
    "HigherOrderChannel",
    "fuse_channels",
    "hoc_forward",
    "hoc_window",
]
