"""Flow and mask comparison metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

MIN_SPEED = 1e-6


class UndefinedCorrelationError(ValueError):
    pass


class SaturatedCorrelationError(ValueError):
    pass


def _flow(F) -> np.ndarray:
    F = np.asarray(F, float)
    if F.shape[-1] != 2:
        raise ValueError(f"flow must end in a (u, v) axis, got shape {F.shape}")
    return F


def epe(F, G) -> float:
    """Mean endpoint error between two [..., 2] flow fields."""
    F, G = _flow(F), _flow(G)
    if F.shape != G.shape:
        raise ValueError(f"flow shapes differ: {F.shape} vs {G.shape}")
    return float(np.sqrt(((F - G) ** 2).sum(axis=-1)).mean())


def decompose(F, min_speed: float = MIN_SPEED):
    """(direction, speed, valid): direction in (-pi, pi], NaN where speed < ``min_speed``."""
    F = _flow(F)
    u, v = F[..., 0], F[..., 1]
    speed = np.hypot(u, v)
    direction = np.arctan2(v, u)
    direction = np.where(direction <= -np.pi, np.pi, direction)
    valid = speed >= min_speed
    return np.where(valid, direction, np.nan), speed, valid


def pearson(x, y, mask=None) -> float:
    """Sample Pearson correlation over the unmasked entries (``mask`` True = keep)."""
    x, y = np.asarray(x, float).ravel(), np.asarray(y, float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"pearson inputs differ in size: {x.size} vs {y.size}")
    if mask is not None:
        keep = np.asarray(mask, bool).ravel()
        x, y = x[keep], y[keep]
    if x.size < 2:
        raise UndefinedCorrelationError("need at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance")
    return float(np.clip((dx * dy).sum() / np.sqrt(sxx * syy), -1.0, 1.0))


def unwrap_pair(a, b) -> np.ndarray:
    """Shift each angle in ``b`` by a multiple of 2*pi to lie within pi of ``a``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return b - 2 * np.pi * np.round((b - a) / (2 * np.pi))


def direction_pearson(dir_a, dir_b, mask=None) -> float:
    """Pearson on direction maps after per-pair unwrapping; NaN entries are dropped."""
    a, b = np.asarray(dir_a, float).ravel(), np.asarray(dir_b, float).ravel()
    keep = np.isfinite(a) & np.isfinite(b)
    if mask is not None:
        keep &= np.asarray(mask, bool).ravel()
    return pearson(a[keep], unwrap_pair(a[keep], b[keep]))


def partial_from_r(r_xy: float, r_xg: float, r_yg: float) -> float:
    """Correlation of x and y with g partialled out."""
    if abs(r_xg) >= 1 or abs(r_yg) >= 1:
        raise SaturatedCorrelationError("control correlation is +-1")
    return float((r_xy - r_xg * r_yg) / (np.sqrt(1 - r_xg ** 2) * np.sqrt(1 - r_yg ** 2)))


def partial_correlation(resp, model, gt, mask=None) -> float:
    """Correlation of ``resp`` and ``model`` controlling for ``gt``."""
    r_rm = pearson(resp, model, mask)
    r_rg = pearson(resp, gt, mask)
    r_mg = pearson(model, gt, mask)
    return partial_from_r(r_rm, r_rg, r_mg)


def iou(mask, gt_mask, adaptive: bool = False, return_flag: bool = False):
    """Intersection over union; ``adaptive`` takes the better of mask and its complement.

    An empty union gives 0; with ``return_flag`` the result is ``(value, empty)``.
    """
    m, g = np.asarray(mask, bool), np.asarray(gt_mask, bool)
    if m.shape != g.shape:
        raise ValueError(f"mask shapes differ: {m.shape} vs {g.shape}")

    def one(a):
        union = (a | g).sum()
        if union == 0:
            return 0.0, True
        return float((a & g).sum() / union), False

    val, empty = one(m)
    if adaptive:
        val2, empty2 = one(~m)
        if val2 > val:
            val, empty = val2, empty2
    return (val, empty) if return_flag else val


@dataclass
class FlowComparison:
    epe: float
    r_uv: float
    r_dir: float
    r_spd: float
    rho_uv: float = float("nan")
    rho_dir: float = float("nan")
    rho_spd: float = float("nan")


def _safe(fn, *args):
    try:
        return fn(*args)
    except (UndefinedCorrelationError, SaturatedCorrelationError):
        return float("nan")


def compare_flows(model, reference, gt=None, min_speed: float = MIN_SPEED) -> FlowComparison:
    """Table-style comparison of a model flow against a reference (e.g. responses).

    Partial correlations controlling for ``gt`` are filled in when it is given.
    """
    M, R = _flow(model), _flow(reference)
    dm, sm, vm = decompose(M, min_speed)
    dr, sr, vr = decompose(R, min_speed)
    valid = vm & vr
    out = FlowComparison(
        epe=epe(M, R),
        r_uv=_safe(pearson, M.ravel(), R.ravel()),
        r_dir=_safe(direction_pearson, dr, dm, valid),
        r_spd=_safe(pearson, sr, sm),
    )
    if gt is not None:
        G = _flow(gt)
        dg, sg, vg = decompose(G, min_speed)
        keep = valid & vg
        out.rho_uv = _safe(partial_correlation, R.ravel(), M.ravel(), G.ravel())
        if keep.sum() >= 2:
            g = dg[keep]
            r_ = unwrap_pair(g, dr[keep])
            m_ = unwrap_pair(g, dm[keep])
            out.rho_dir = _safe(partial_correlation, r_, m_, g)
        out.rho_spd = _safe(partial_correlation, sr, sm, sg)
    return out


def comparisons_csv(rows: dict[str, FlowComparison]) -> str:
    buf = io.StringIO()
    fields = ["name", "epe", "r_uv", "r_dir", "r_spd", "rho_uv", "rho_dir", "rho_spd"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for name, c in rows.items():
        w.writerow({"name": name, **{k: f"{v:.6g}" for k, v in asdict(c).items()}})
    return buf.getvalue()
