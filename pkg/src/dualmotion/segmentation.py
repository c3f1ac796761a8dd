"""Training-free segmentation by spectral bipartition of the motion graph.

The Fiedler vector of the normalized Laplacian is found with a Lanczos
process (full reorthogonalization, explicit deflation of known null
directions), polished by shifted inverse iteration, and thresholded at its
mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, lu_factor, lu_solve

MAX_NODES = 4096
DENSE_LIMIT = 512
GAP_TOL = 1e-10
RESIDUAL_TOL = 1e-6


class DegenerateSpectrumError(ValueError):
    """The second and third smallest eigenvalues coincide, so u2 is not unique."""

    def __init__(self, gap: float):
        super().__init__(f"eigengap {gap:.3e} below {GAP_TOL:g}: Fiedler vector is not unique")
        self.gap = gap


class DegenerateMaskError(ValueError):
    pass


@dataclass
class FiedlerResult:
    vector: np.ndarray
    value: float
    gap: float
    residual: float


@dataclass
class SegmentationMask:
    """Binary labels on the node grid; ``polarity`` picks which side is foreground."""

    mask: np.ndarray
    polarity: bool = True
    degenerate: bool = False
    labels: np.ndarray | None = None  # 0/1/2 when a recursive re-cut was requested

    @property
    def foreground(self) -> np.ndarray:
        return self.mask if self.polarity else ~self.mask

    def flipped(self) -> "SegmentationMask":
        return SegmentationMask(self.mask, not self.polarity, self.degenerate, self.labels)

    def upsampled(self, factor: int = 8) -> np.ndarray:
        return np.kron(self.foreground.astype(np.uint8), np.ones((factor, factor), np.uint8)).astype(bool)


# ---------------------------------------------------------------- Laplacian
def degrees(A: np.ndarray) -> np.ndarray:
    return np.asarray(A, float).sum(axis=1)


def laplacian(A, normalized: bool = True, atol: float = 1e-9) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` (or ``D - A`` when ``normalized`` is False)."""
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got {A.shape}")
    if np.abs(A - A.T).max(initial=0.0) > atol:
        raise ValueError("adjacency is not symmetric")
    if (A < 0).any():
        raise ValueError("adjacency has negative weights")
    d = A.sum(axis=1)
    zero = np.flatnonzero(d <= 0)
    if zero.size:
        raise ValueError(f"node {int(zero[0])} has zero degree")
    if not normalized:
        return np.diag(d) - A
    s = 1.0 / np.sqrt(d)
    L = np.eye(len(d)) - s[:, None] * A * s[None, :]
    return (L + L.T) / 2.0


# ----------------------------------------------------------------- Lanczos
def _orthonormalize_against(v: np.ndarray, basis: list[np.ndarray], passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        for q in basis:
            v = v - (q @ v) * q
    return v


def lanczos(L: np.ndarray, m: int, deflate: list[np.ndarray] | None = None, seed: int = 0):
    """Lanczos tridiagonalization restricted to the complement of ``deflate``.

    Uses full reorthogonalization; on breakdown it restarts with a fresh
    random vector orthogonal to everything so far, so the full invariant
    subspace is covered when ``m`` equals its dimension. Returns (alpha, beta, Q)
    with Q holding the Lanczos vectors as columns.
    """
    n = L.shape[0]
    deflate = [d / np.linalg.norm(d) for d in (deflate or [])]
    m = min(m, n - len(deflate))
    rng = np.random.default_rng(seed)
    fixed = list(deflate)
    Q: list[np.ndarray] = []
    alpha, beta = [], []

    def fresh():
        for _ in range(5):
            v = _orthonormalize_against(rng.standard_normal(n), fixed + Q)
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                return v / nv
        return None

    q = fresh()
    while q is not None and len(Q) < m:
        Q.append(q)
        w = L @ q
        a = float(q @ w)
        alpha.append(a)
        w = _orthonormalize_against(w, fixed + Q)
        b = float(np.linalg.norm(w))
        if len(Q) == m:
            break
        if b < 1e-10 * max(1.0, abs(a)):
            beta.append(0.0)
            q = fresh()
        else:
            beta.append(b)
            q = w / b
    return np.array(alpha), np.array(beta[: len(alpha) - 1]), np.column_stack(Q)


def _smallest_ritz(L, deflate, seed, m=None, k: int = 1):
    n = L.shape[0]
    if m is None:
        m = n if n <= DENSE_LIMIT else min(n, 300)
    a, b, Q = lanczos(L, m, deflate, seed)
    k = min(k, len(a))
    vals, vecs = eigh_tridiagonal(a, b, select="i", select_range=(0, k - 1))
    return vals, Q @ vecs


def _refine(L, lam, v, deflate, iters: int = 30):
    """Shifted inverse iteration in the deflated subspace, then a Rayleigh quotient."""
    n = L.shape[0]
    shift = lam - 1e-9 * max(1.0, abs(lam))
    lu = lu_factor(L - shift * np.eye(n), check_finite=False)
    for _ in range(iters):
        res = np.linalg.norm(L @ v - lam * v)
        if res < 1e-12:
            break
        y = lu_solve(lu, v, check_finite=False)
        y = _orthonormalize_against(y, deflate)
        ny = np.linalg.norm(y)
        if not np.isfinite(ny) or ny == 0:
            break
        v = y / ny
        lam = float(v @ L @ v)
    return lam, v


def fiedler_vector(L, null_vector=None, seed: int = 0, check_gap: bool = True) -> FiedlerResult:
    """Unit eigenvector of the second-smallest eigenvalue of a symmetric PSD ``L``.

    ``null_vector`` is the known eigenvector of eigenvalue 0 (``D^1/2 1`` for a
    normalized Laplacian). If omitted it is estimated first. Raises
    DegenerateSpectrumError when the gap to the third eigenvalue is below 1e-10.
    The sign is fixed so that the largest-magnitude entry is positive.
    """
    L = np.asarray(L, float)
    n = L.shape[0]
    if L.shape != (n, n):
        raise ValueError("L must be square")
    if n > MAX_NODES:
        raise ValueError(f"{n} nodes exceed the limit of {MAX_NODES}; downscale the input")
    if n < 3:
        raise ValueError("need at least 3 nodes for a Fiedler vector with a gap check")
    if null_vector is None:
        _, v0 = _smallest_ritz(L, [], seed)
        lam0, u1 = _refine(L, float(v0[:, 0] @ L @ v0[:, 0]), v0[:, 0], [])
    else:
        u1 = np.asarray(null_vector, float)
        u1 = u1 / np.linalg.norm(u1)
    vals, vecs = _smallest_ritz(L, [u1], seed + 1)
    lam2, u2 = _refine(L, float(vals[0]), vecs[:, 0], [u1])
    u2 = _orthonormalize_against(u2, [u1])
    u2 /= np.linalg.norm(u2)
    lam2 = float(u2 @ L @ u2)
    residual = float(np.linalg.norm(L @ u2 - lam2 * u2))
    gap = np.inf
    if n > 2:
        vals3, vecs3 = _smallest_ritz(L, [u1, u2], seed + 2)
        lam3, _ = _refine(L, float(vals3[0]), vecs3[:, 0], [u1, u2], iters=10)
        gap = float(lam3 - lam2)
    if check_gap and gap < GAP_TOL:
        raise DegenerateSpectrumError(gap)
    if u2[np.argmax(np.abs(u2))] < 0:
        u2 = -u2
    return FiedlerResult(u2, lam2, gap, residual)


# -------------------------------------------------------------- bipartition
def bipartition(u2) -> SegmentationMask:
    """``mask = u2 > mean(u2)``; polarity is left to the caller."""
    u2 = np.asarray(u2, float)
    if not np.all(np.isfinite(u2)):
        raise ValueError("u2 has non-finite entries")
    if np.ptp(u2) == 0:
        raise DegenerateMaskError("all entries of u2 are equal; no cut exists")
    return SegmentationMask(u2 > u2.mean())


def majority_filter(mask: np.ndarray, min_disagree: int = 6) -> np.ndarray:
    """Flip pixels whose 8 neighbours mostly disagree (at least ``min_disagree`` of 8).

    Edges are replicated. Straight boundaries and convex corners are fixed points;
    isolated specks and one-pixel notches are removed.
    """
    m = np.asarray(mask, bool)
    p = np.pad(m.astype(int), 1, mode="edge")
    H, W = m.shape
    same = np.zeros((H, W), int)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            same += p[1 + di:1 + di + H, 1 + dj:1 + dj + W] == m
    return np.where(8 - same >= min_disagree, ~m, m)


def assign_polarity(seg: SegmentationMask) -> SegmentationMask:
    """Foreground is the side touching the grid border less (ties: the smaller side)."""
    m = seg.mask
    border = np.zeros_like(m)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    on = (m & border).sum() / max(border.sum(), 1)
    off = (~m & border).sum() / max(border.sum(), 1)
    polarity = on < off or (on == off and m.sum() <= (~m).sum())
    return SegmentationMask(m, bool(polarity), seg.degenerate, seg.labels)


def segment(A, grid: tuple[int, int] | None = None, refine: bool = True, recursive: bool = False,
            seed: int = 0) -> SegmentationMask:
    """Laplacian -> Fiedler vector -> mean threshold [-> 3x3 majority] [-> one re-cut].

    ``A`` is [N, N]; ``grid`` reshapes the N labels (defaults to square).
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    if grid is None:
        side = int(round(np.sqrt(n)))
        grid = (side, n // side)
    if grid[0] * grid[1] != n:
        raise ValueError(f"grid {grid} does not hold {n} nodes")
    L = laplacian(A)
    d = degrees(A)
    res = fiedler_vector(L, np.sqrt(d), seed)
    seg = bipartition(res.vector)
    mask = seg.mask.reshape(grid)
    if refine:
        mask = majority_filter(mask)
    out = assign_polarity(SegmentationMask(mask))
    if recursive:
        labels = out.foreground.astype(int).reshape(-1)
        big = 1 if labels.sum() >= n - labels.sum() else 0
        idx = np.flatnonzero(labels == big)
        if idx.size >= 4:
            sub = A[np.ix_(idx, idx)]
            try:
                r2 = fiedler_vector(laplacian(sub), np.sqrt(degrees(sub)), seed + 3)
                sub_mask = bipartition(r2.vector).mask
                labels[idx[sub_mask]] = 2
            except (DegenerateSpectrumError, DegenerateMaskError, ValueError):
                pass
        out.labels = labels.reshape(grid)
    return out
