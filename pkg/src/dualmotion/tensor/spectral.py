"""FFT-backed fused space-time quadrature filtering.

Computes, for U separable complex filters ``G_u(x, y) * T_u(k)``, the real and
imaginary parts of the filtered window at its last frame:

    even_u = sum_k (S_{-k} (x) Re G_u) Re T_u[k] - (S_{-k} (x) Im G_u) Im T_u[k]
    odd_u  = sum_k (S_{-k} (x) Im G_u) Re T_u[k] + (S_{-k} (x) Re G_u) Im T_u[k]

where ``(x)`` is zero-padded 'same' cross-correlation. Frames are first mixed
by each unit's temporal kernel, so only two inverse transforms per unit and
sample are needed. The backward pass uses adjoint circular convolutions.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .autograd import ShapeError, Tensor, _result, as_tensor


def _embed_kernel(k: np.ndarray, n: int, m: int) -> np.ndarray:
    """Place [U, kh, kw] kernels so that circular convolution == 'same' correlation."""
    U, kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    img = np.zeros((U, n, m), dtype=k.dtype)
    rows = (-(np.arange(kh) - rh)) % n
    cols = (-(np.arange(kw) - rw)) % m
    img[:, rows[:, None], cols[None, :]] = k
    return img


def _gather_kernel(img: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, m = img.shape[-2:]
    rows = (-(np.arange(kh) - kh // 2)) % n
    cols = (-(np.arange(kw) - kw // 2)) % m
    return img[:, rows[:, None], cols[None, :]]


def _rdot(a: np.ndarray, b: np.ndarray, m: int, axes=(-2, -1)) -> np.ndarray:
    """Real inner product of two real images given their rfft2 spectra."""
    w = np.full(a.shape[-1], 2.0)
    w[0] = 1.0
    if m % 2 == 0:
        w[-1] = 1.0
    n = a.shape[-2]
    return (np.real(a * np.conj(b)) * w).sum(axis=axes) / (n * m)


def _mix(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``out[b, u, ...] = sum_t w[u, t] * a[b, t, ...]`` as one matrix product per sample."""
    B, nt = a.shape[:2]
    out = np.matmul(w, a.reshape(B, nt, -1))
    return out.reshape((B, w.shape[0]) + a.shape[2:])


def quadrature_filter(frames, gr, gi, tr, ti) -> Tensor:
    """Odd/even responses stacked as [B, 2, U, H, W] (index 0 odd, 1 even).

    ``frames`` is [B, t, H, W] (the last frame is lag 0), ``gr``/``gi`` are
    [U, kh, kw] and ``tr``/``ti`` are [U, t].
    """
    frames, gr, gi, tr, ti = map(as_tensor, (frames, gr, gi, tr, ti))
    B, nt, H, W = frames.shape
    U, kh, kw = gr.shape
    if gi.shape != gr.shape or tr.shape != (U, nt) or ti.shape != (U, nt):
        raise ShapeError(
            f"quadrature_filter shapes: frames {frames.shape}, spatial {gr.shape}/{gi.shape}, "
            f"temporal {tr.shape}/{ti.shape}"
        )
    n = sfft.next_fast_len(H + kh // 2, real=True)
    m = sfft.next_fast_len(W + kw // 2, real=True)
    dt = np.result_type(frames.dtype, gr.dtype)
    ctype = np.result_type(dt, np.complex64)

    S = sfft.rfft2(frames.data.astype(dt, copy=False), s=(n, m))  # B, t, n, mh
    S_lag = S[:, ::-1]  # lag k at index k
    Kr = sfft.rfft2(_embed_kernel(gr.data.astype(dt, copy=False), n, m))
    Ki = sfft.rfft2(_embed_kernel(gi.data.astype(dt, copy=False), n, m))
    trd = tr.data.astype(dt, copy=False)
    tid = ti.data.astype(dt, copy=False)
    Ar = _mix(trd.astype(ctype), S_lag)
    Ai = _mix(tid.astype(ctype), S_lag)
    even_hat = Ar * Kr - Ai * Ki
    odd_hat = Ai * Kr + Ar * Ki
    even = sfft.irfft2(even_hat, s=(n, m))[..., :H, :W]
    odd = sfft.irfft2(odd_hat, s=(n, m))[..., :H, :W]
    out = np.ascontiguousarray(np.stack([odd, even], axis=1))

    def bw(g):
        go = sfft.rfft2(g[:, 0], s=(n, m))
        ge = sfft.rfft2(g[:, 1], s=(n, m))
        ggr = ggi = gtr = gti = gframes = None
        if gr.requires_grad or gi.requires_grad:
            kr_img = sfft.irfft2((ge * np.conj(Ar) + go * np.conj(Ai)).sum(axis=0), s=(n, m))
            ki_img = sfft.irfft2((go * np.conj(Ar) - ge * np.conj(Ai)).sum(axis=0), s=(n, m))
            ggr = _gather_kernel(kr_img, kh, kw)
            ggi = _gather_kernel(ki_img, kh, kw)
        g_ar = ge * np.conj(Kr) + go * np.conj(Ki)
        g_ai = go * np.conj(Kr) - ge * np.conj(Ki)
        if tr.requires_grad or ti.requires_grad:
            # d/dT[u, k] = <g_ar[b, u], s_lag[b, k]> summed over the batch
            gtr = np.stack([_rdot(g_ar, S_lag[:, k, None], m).sum(axis=0) for k in range(nt)], axis=1)
            gti = np.stack([_rdot(g_ai, S_lag[:, k, None], m).sum(axis=0) for k in range(nt)], axis=1)
        if frames.requires_grad:
            gs_lag = _mix(trd.T.astype(ctype), g_ar)
            gs_lag += _mix(tid.T.astype(ctype), g_ai)
            gframes = sfft.irfft2(gs_lag[:, ::-1], s=(n, m))[..., :H, :W]
            gframes = np.ascontiguousarray(gframes)
        return gframes, ggr, ggi, gtr, gti

    return _result(out, (frames, gr, gi, tr, ti), bw)


def _dft_mats(ks: tuple[int, ...], sizes: tuple[int, ...], dtype) -> list[np.ndarray]:
    """Per-axis DFT matrices [n_freq, k] for kernels placed for 'same' correlation."""
    mats = []
    for ax, (k, n) in enumerate(zip(ks, sizes)):
        pos = (-(np.arange(k) - k // 2)) % n
        nf = n // 2 + 1 if ax == len(ks) - 1 else n
        f = np.arange(nf)
        mats.append(np.exp(-2j * np.pi * np.outer(f, pos) / n).astype(dtype))
    return mats


def _kernel_spectrum(kl: np.ndarray, mats: list[np.ndarray]) -> np.ndarray:
    """rfftn of the embedded [kt, kh, kw, C, K] kernel, done as three small DFTs."""
    out = kl
    for m in mats:
        # contract the leading kernel axis and append the frequency axis at the end
        out = np.moveaxis(np.tensordot(out, m, axes=([0], [1])), -1, 2)
    return out


def _kernel_spectrum_adjoint(G: np.ndarray, mats: list[np.ndarray], sizes: tuple[int, ...]) -> np.ndarray:
    """Gradient w.r.t. the [kt, kh, kw, C, K] kernel given a gradient spectrum laid out like the forward one."""
    n_last = sizes[-1]
    w = np.full(G.shape[2], 2.0)
    w[0] = 1.0
    if n_last % 2 == 0:
        w[-1] = 1.0
    out = G * w[:, None, None]
    for m in mats:
        out = np.moveaxis(np.tensordot(out, np.conj(m), axes=([0], [0])), -1, 2)
    return np.real(out) / float(np.prod(sizes))


def conv3d_same(x, kernel) -> Tensor:
    """'Same' zero-padded 3-D cross-correlation via FFT, channels-last layout.

    ``x`` is [T, H, W, B, C] and ``kernel`` is [K, C, kt, kh, kw] with odd
    sizes; the result is [T, H, W, B, K]. Up to layout this equals ``conv3d``
    with padding ``(kt//2, kh//2, kw//2)``. Keeping channels last lets the
    per-frequency channel mixing run as one batched matrix product.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 5 or kernel.ndim != 5 or x.shape[4] != kernel.shape[1]:
        raise ShapeError(f"conv3d_same expects [T,H,W,B,C] and [K,C,kt,kh,kw]; got {x.shape}, {kernel.shape}")
    ks = kernel.shape[2:]
    if any(n % 2 == 0 for n in ks):
        raise ShapeError(f"conv3d_same kernel sizes must be odd, got {ks}")
    dims = x.shape[:3]
    sizes = tuple(sfft.next_fast_len(d + n // 2, real=(i == 2)) for i, (d, n) in enumerate(zip(dims, ks)))
    axes = (0, 1, 2)
    dt = np.result_type(x.dtype, kernel.dtype)
    X = sfft.rfftn(x.data.astype(dt, copy=False), s=sizes, axes=axes)
    kl = kernel.data.astype(dt, copy=False).transpose(2, 3, 4, 1, 0)  # kt, kh, kw, C, K
    mats = _dft_mats(ks, sizes, np.result_type(dt, np.complex64))
    Kh = _kernel_spectrum(kl, mats)
    out = np.ascontiguousarray(sfft.irfftn(X @ Kh, s=sizes, axes=axes)[: dims[0], : dims[1], : dims[2]])

    def bw(g):
        G = sfft.rfftn(g, s=sizes, axes=axes)
        gx = gk = None
        if x.requires_grad:
            KhH = np.ascontiguousarray(np.conj(Kh).swapaxes(-1, -2))
            gx = sfft.irfftn(G @ KhH, s=sizes, axes=axes)[: dims[0], : dims[1], : dims[2]]
            gx = np.ascontiguousarray(gx)
        if kernel.requires_grad:
            GK = np.conj(X).swapaxes(-1, -2) @ G  # F.., C, K
            gk = _kernel_spectrum_adjoint(GK, mats, sizes).transpose(4, 3, 0, 1, 2).astype(dt)
            gk = np.ascontiguousarray(gk)
        return gx, gk

    return _result(out, (x, kernel), bw)
