"""First-order motion-energy channel.

Each of the 256 units is a spatiotemporally separable Gabor sensor: a complex
15x15 spatial Gabor times a complex damped temporal sinusoid over six frames.
Quadrature simple-cell outputs are squared and summed into a phase-invariant
energy, units are spread over an 8-level image pyramid, and energies are
divisively normalized across units at 1/8 resolution.

Coordinates: ``x`` runs along columns (rightwards) and ``y`` along rows
(downwards). A unit with orientation ``theta`` and ``f_t > 0`` prefers motion
along ``(cos theta, sin theta)`` at ``f_t / f_s`` pixels per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .resize import bilinear_matrix
from .tensor import Tensor
from .tensor.spectral import quadrature_filter

KERNEL_SIZE = 15
RADIUS = 7.5
WINDOW = 6
N_UNITS = 256
N_SCALES = 8
FIRST_ORDER_FRAMES = 11
FREQ_MAX = 0.25 - 1e-6
FREQ_MIN = 1e-3
POSITIVE_MIN = 1e-3


@dataclass
class GaborParams:
    """Parameters of one sensor."""

    f_s: float
    f_t: float
    theta: float
    sigma: float
    gamma: float = 1.0
    tau: float = 3.0
    alpha1: float = 0.0
    scale_index: int = 0

    def clamped(self) -> "GaborParams":
        return GaborParams(
            f_s=float(np.clip(self.f_s, FREQ_MIN, FREQ_MAX)),
            f_t=float(np.clip(self.f_t, FREQ_MIN, FREQ_MAX)),
            theta=wrap_angle(self.theta),
            sigma=max(self.sigma, POSITIVE_MIN),
            gamma=max(self.gamma, POSITIVE_MIN),
            tau=max(self.tau, POSITIVE_MIN),
            alpha1=self.alpha1,
            scale_index=int(np.clip(self.scale_index, 0, N_SCALES - 1)),
        )


def wrap_angle(theta):
    """Map angles into [0, 2*pi); guards the rounding of ``-tiny % 2*pi`` to 2*pi."""
    out = np.mod(theta, 2 * np.pi)
    if np.ndim(out) == 0:
        return 0.0 if out >= 2 * np.pi else float(out)
    out[out >= 2 * np.pi] = 0.0
    return out


def _grid(size: int = KERNEL_SIZE):
    r = np.arange(size) - size // 2
    y, x = np.meshgrid(r, r, indexing="ij")
    return x.astype(float), y.astype(float), (x * x + y * y) <= RADIUS**2


def _as_vec(v) -> Tensor:
    return v.reshape(-1) if isinstance(v, Tensor) else Tensor(np.atleast_1d(np.asarray(v, float)))


def spatial_kernels(f_s, theta, sigma, gamma, size: int = KERNEL_SIZE) -> tuple[Tensor, Tensor]:
    """Real and imaginary Gabor kernels, each [U, size, size]; differentiable."""
    f_s, theta, sigma, gamma = map(_as_vec, (f_s, theta, sigma, gamma))
    U = f_s.shape[0]
    dt = f_s.dtype
    x, y, inside = _grid(size)
    shape = (U, size, size)

    def per_unit(v):
        return v.reshape(U, 1, 1).expand(shape)

    X = Tensor(np.broadcast_to(x, shape).astype(dt))
    Y = Tensor(np.broadcast_to(y, shape).astype(dt))
    c, s = per_unit(T.cos(theta)), per_unit(T.sin(theta))
    xr = X * c + Y * s
    yr = Y * c - X * s
    g2 = per_unit(T.square(gamma))
    env = T.exp(-(T.square(xr) + g2 * T.square(yr)) / per_unit(2.0 * T.square(sigma)))
    env = env * Tensor(np.broadcast_to(inside, shape).astype(dt))
    phase = xr * per_unit(f_s * (2 * np.pi))
    return env * T.cos(phase), env * T.sin(phase)


def temporal_kernels(f_t, tau, length: int = WINDOW) -> tuple[Tensor, Tensor]:
    """Real and imaginary damped temporal sinusoids, each [U, length]."""
    if length < 1:
        raise ValueError("temporal window must be >= 1 frame")
    f_t, tau = _as_vec(f_t), _as_vec(tau)
    U = f_t.shape[0]
    t = Tensor(np.broadcast_to(np.arange(length, dtype=f_t.dtype), (U, length)))
    decay = T.exp(-t / tau.reshape(U, 1).expand((U, length)))
    phase = t * (f_t * (2 * np.pi)).reshape(U, 1).expand((U, length))
    return decay * T.cos(phase), decay * T.sin(phase)


def make_spatial_gabor(p: GaborParams) -> tuple[np.ndarray, np.ndarray]:
    re, im = spatial_kernels(p.f_s, p.theta, p.sigma, p.gamma)
    return re.data[0], im.data[0]


def make_temporal_kernel(p: GaborParams, length: int = WINDOW) -> tuple[np.ndarray, np.ndarray]:
    re, im = temporal_kernels(p.f_t, p.tau, length)
    return re.data[0], im.data[0]


def simple_cells(frames: Tensor, f_s, theta, sigma, gamma, f_t, tau, alpha1) -> tuple[Tensor, Tensor]:
    """Odd and even simple-cell maps for U units on frames [B, t, H, W].

    Uses the last ``WINDOW`` frames; returns two [B, U, H, W] tensors with the
    spontaneous rate added to each.
    """
    B, nt, H, W = frames.shape
    if nt < WINDOW:
        raise ValueError(f"need at least {WINDOW} frames, got {nt}")
    if nt > WINDOW:
        frames = frames[:, nt - WINDOW:]
    gr, gi = spatial_kernels(f_s, theta, sigma, gamma)
    U = gr.shape[0]
    tr, ti = temporal_kernels(f_t, tau)
    both = quadrature_filter(frames, gr, gi, tr, ti)
    odd, even = both[:, 0], both[:, 1]
    a = _as_vec(alpha1).reshape(1, U, 1, 1).expand((B, U, H, W))
    return odd + a, even + a


def quadrature_responses(S, unit: GaborParams) -> tuple[np.ndarray, np.ndarray]:
    """Odd/even responses of one unit to a grayscale sequence S[T, H, W] (T >= 6)."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 3 or S.shape[0] < WINDOW:
        raise ValueError(f"expected [T>={WINDOW}, H, W] sequence, got {S.shape}")
    odd, even = simple_cells(
        Tensor(S[None]), unit.f_s, unit.theta, unit.sigma, unit.gamma, unit.f_t, unit.tau, unit.alpha1
    )
    return odd.data[0, 0], even.data[0, 0]


def complex_cell_energy(odd, even):
    """Phase-invariant energy ``odd**2 + even**2`` (works on arrays or tensors)."""
    if isinstance(odd, Tensor) or isinstance(even, Tensor):
        return T.square(T.as_tensor(odd)) + T.square(T.as_tensor(even))
    odd, even = np.asarray(odd), np.asarray(even)
    if odd.shape != even.shape:
        raise ValueError(f"shape mismatch {odd.shape} vs {even.shape}")
    return odd * odd + even * even


def divisive_normalize(energies, k: float | Tensor, sigma: float | Tensor, axis: int = 1):
    """``k * L_n / (sum_i L_i + sigma)`` across units along ``axis``."""
    if not isinstance(energies, Tensor):
        e = np.asarray(energies, dtype=float)
        return float(k) * e / (e.sum(axis=axis, keepdims=True) + float(sigma))
    total = energies.sum(axis=axis, keepdims=True).expand(energies.shape)
    k, sigma = T.as_tensor(k), T.as_tensor(sigma)
    return energies * k.reshape(()) / (total + sigma.reshape(()))


# ------------------------------------------------------------------ pyramid
def pyramid_sizes(H: int, W: int, n: int = N_SCALES) -> list[tuple[int, int]]:
    """Sizes whose areas fall linearly from H*W to H*W/16."""
    sizes = []
    for k in range(n):
        ratio = 1.0 - k * (15.0 / 16.0) / (n - 1)
        f = math.sqrt(ratio)
        sizes.append((max(1, round(H * f)), max(1, round(W * f))))
    return sizes


def check_frame_size(H: int, W: int) -> None:
    hc, wc = pyramid_sizes(H, W)[-1]
    if min(hc, wc) < KERNEL_SIZE:
        raise ValueError(
            f"frames {H}x{W} too small: coarsest pyramid level {hc}x{wc} cannot hold a "
            f"{KERNEL_SIZE}x{KERNEL_SIZE} kernel (need H, W >= {4 * KERNEL_SIZE})"
        )


def build_pyramid(S) -> list:
    """Eight bilinearly resampled copies of S[..., H, W]; level 0 is S itself."""
    is_t = isinstance(S, Tensor)
    H, W = S.shape[-2:]
    if H < 32 or W < 32:
        raise ValueError(f"pyramid needs H, W >= 32, got {H}x{W}")
    check_frame_size(H, W)
    out = []
    for h, w in pyramid_sizes(H, W):
        if (h, w) == (H, W):
            out.append(S)
            continue
        dt = S.dtype if not is_t else S.data.dtype
        ry, rx = bilinear_matrix(H, h, dt), bilinear_matrix(W, w, dt)
        out.append(T.resample(S, ry, rx) if is_t else ry @ np.asarray(S) @ rx.T)
    return out


# --------------------------------------------------------------------- bank
PARAM_NAMES = ("f_s", "f_t", "theta", "sigma", "gamma", "tau", "alpha1")


class MotionEnergyBank:
    """256 trainable sensors plus the normalization constants K1 and sigma1."""

    def __init__(self, seed: int | None = 0, n_units: int = N_UNITS, dtype=np.float64):
        rng = np.random.default_rng(seed)
        lo, hi = np.log(0.02), np.log(0.24)
        init = {
            "f_s": np.exp(rng.uniform(lo, hi, n_units)),
            "f_t": np.exp(rng.uniform(lo, hi, n_units)),
            "theta": rng.uniform(0, 2 * np.pi, n_units),
            "sigma": rng.uniform(2.0, 5.0, n_units),
            "gamma": np.ones(n_units),
            "tau": rng.uniform(1.5, 4.0, n_units),
            "alpha1": np.zeros(n_units),
        }
        self.units = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in init.items()}
        self.K1 = Tensor(np.array(1.0, dtype), requires_grad=True)
        self.sigma1 = Tensor(np.array(0.05, dtype), requires_grad=True)
        per = n_units // N_SCALES
        self.scale_index = np.minimum(np.arange(n_units) // max(per, 1), N_SCALES - 1)

    @property
    def n_units(self) -> int:
        return self.units["f_s"].shape[0]

    @classmethod
    def from_units(cls, units: list[GaborParams], K1: float = 1.0, sigma1: float = 0.05, dtype=np.float64):
        bank = cls(seed=0, n_units=len(units), dtype=dtype)
        for name in PARAM_NAMES:
            bank.units[name].data = np.array([getattr(u, name) for u in units], dtype=dtype)
        bank.scale_index = np.array([u.scale_index for u in units])
        bank.K1.data = np.array(K1, dtype)
        bank.sigma1.data = np.array(sigma1, dtype)
        return bank

    def unit(self, i: int) -> GaborParams:
        vals = {k: float(self.units[k].data[i]) for k in PARAM_NAMES}
        return GaborParams(**vals, scale_index=int(self.scale_index[i]))

    def parameters(self) -> dict[str, Tensor]:
        out = {k: v for k, v in self.units.items()}
        out["K1"] = self.K1
        out["sigma1"] = self.sigma1
        return out

    def astype(self, dtype) -> "MotionEnergyBank":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self

    def clamp(self) -> None:
        u = self.units
        u["f_s"].data = np.clip(u["f_s"].data, FREQ_MIN, FREQ_MAX)
        u["f_t"].data = np.clip(u["f_t"].data, FREQ_MIN, FREQ_MAX)
        u["theta"].data = wrap_angle(u["theta"].data)
        for k in ("sigma", "gamma", "tau"):
            u[k].data = np.maximum(u[k].data, POSITIVE_MIN)
        self.K1.data = np.maximum(self.K1.data, POSITIVE_MIN)
        self.sigma1.data = np.maximum(self.sigma1.data, POSITIVE_MIN)

    # ----------------------------------------------------------- forward
    def raw_energies(self, window, out_size: tuple[int, int]) -> Tensor:
        """Unnormalized energies [B, U, h, w] from a window [B, 6, H, W].

        The window is mean-centred per sample before filtering, so a uniform
        field of any level drives only the spontaneous rates.
        """
        window = T.as_tensor(window)
        B, nt, H, W = window.shape
        if nt != WINDOW:
            raise ValueError(f"window must hold {WINDOW} frames, got {nt}")
        check_frame_size(H, W)
        mu = window.reshape(B, -1).mean(axis=1).reshape(B, 1, 1, 1).expand(window.shape)
        centred = window - mu
        levels = build_pyramid(centred)
        maps = []
        for level in range(N_SCALES):
            idx = np.flatnonzero(self.scale_index == level)
            if idx.size == 0:
                continue
            sel = {k: self.units[k][idx] for k in PARAM_NAMES}
            odd, even = simple_cells(
                levels[level], sel["f_s"], sel["theta"], sel["sigma"], sel["gamma"],
                sel["f_t"], sel["tau"], sel["alpha1"],
            )
            energy = complex_cell_energy(odd, even)
            h, w = energy.shape[-2:]
            dt = energy.data.dtype
            maps.append((idx, T.resample(energy, bilinear_matrix(h, out_size[0], dt), bilinear_matrix(w, out_size[1], dt))))
        order = np.concatenate([i for i, _ in maps])
        stacked = T.concat([m for _, m in maps], 1)
        if not np.array_equal(order, np.arange(self.n_units)):
            stacked = stacked[:, np.argsort(order)]
        return stacked

    def forward(self, window, out_size: tuple[int, int]) -> Tensor:
        """Normalized motion energy [B, U, h, w]."""
        return divisive_normalize(self.raw_energies(window, out_size), self.K1, self.sigma1)


def midpoint_window(seq, length: int | None = None):
    """The six frames ending at the sequence midpoint, from [.., T, H, W]."""
    nt = seq.shape[-3]
    mid = nt // 2
    if mid + 1 < WINDOW:
        raise ValueError(f"sequence of {nt} frames too short for a {WINDOW}-frame window at its midpoint")
    return seq[..., mid - WINDOW + 1: mid + 1, :, :]


def output_size(H: int, W: int) -> tuple[int, int]:
    if H % 8 or W % 8:
        raise ValueError(f"frame size {H}x{W} must be divisible by 8")
    return H // 8, W // 8


def stage1_forward(bank: MotionEnergyBank, S) -> Tensor:
    """E1 [B, 256, H/8, W/8] from grayscale sequences [B, T>=11, H, W] (or [T, H, W])."""
    S = T.as_tensor(S)
    if S.ndim == 3:
        S = S.reshape(1, *S.shape)
    if S.shape[1] < FIRST_ORDER_FRAMES:
        raise ValueError(f"first-order channel needs >= {FIRST_ORDER_FRAMES} frames, got {S.shape[1]}")
    H, W = S.shape[-2:]
    return bank.forward(midpoint_window(S), output_size(H, W))


@dataclass
class MotionEnergyMap:
    """Energies laid out [H/8, W/8, 256] with a provenance tag."""

    values: np.ndarray
    tag: str = "E1"

    @classmethod
    def from_tensor(cls, t: Tensor, tag: str = "E1", index: int = 0) -> "MotionEnergyMap":
        return cls(np.moveaxis(t.data[index], 0, -1), tag)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma of [..., 3, H, W] RGB frames."""
    rgb = np.asarray(rgb)
    return 0.299 * rgb[..., 0, :, :] + 0.587 * rgb[..., 1, :, :] + 0.114 * rgb[..., 2, :, :]
