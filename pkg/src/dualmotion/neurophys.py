"""In-silico neurophysiology on model units.

Responses are spatial means of unit activation maps: the Stage I energies
(``"stage1"``), or for Stage II iteration ``i`` (``"iter{i}"``) the
decoder-normalized state, which is nonnegative. Direction tuning uses 12
directions ``k * 30 deg`` for k = 1..12.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .first_order import MotionEnergyBank, divisive_normalize, midpoint_window, output_size, to_gray
from .stimuli import drifting_gabor, plaid

N_DIRECTIONS = 12
GRID_SIZE = 8
F_RANGE = (0.02, 0.2)
Z_MARGIN = 1.28


def directions(n: int = N_DIRECTIONS) -> np.ndarray:
    """n directions uniformly spaced in (0, 2*pi]."""
    return 2 * np.pi * np.arange(1, n + 1) / n


def frequency_grid(n: int = GRID_SIZE, lo: float = F_RANGE[0], hi: float = F_RANGE[1]) -> np.ndarray:
    return np.exp(np.linspace(np.log(lo), np.log(hi), n))


@dataclass
class TuningCurve:
    angles: np.ndarray
    responses: np.ndarray
    descriptor: dict | None = None


@dataclass
class CellClassification:
    R_pattern: float
    R_component: float
    label: str


# ------------------------------------------------------------- responses
def stage_responses(model, frames, iterations: int | None = None) -> dict[str, np.ndarray]:
    """Spatially averaged responses [B, 256] for Stage I and every Stage II iteration.

    A bare MotionEnergyBank is accepted too and yields ``"stage1"`` plus
    ``"raw"``, the energies before divisive normalization.
    """
    if isinstance(model, MotionEnergyBank):
        gray = to_gray(np.asarray(frames, float))
        H, W = gray.shape[-2:]
        with T.no_grad():
            raw = model.raw_energies(midpoint_window(gray), output_size(H, W))
            E1 = divisive_normalize(raw, model.K1, model.sigma1)
        return {"stage1": E1.data.mean(axis=(2, 3)), "raw": raw.data.mean(axis=(2, 3))}
    with T.no_grad():
        out = model.forward(frames, iterations)
    E = out.energies
    res = {"stage1": E["Em"].data.mean(axis=(2, 3))}
    i = 1
    while f"E^{i}" in E:
        res[f"iter{i}"] = model.decoder.normalize(E[f"E^{i}"]).data.mean(axis=(2, 3))
        i += 1
    return res


def unit_responses(model, stimulus, stage: str = "stage1") -> np.ndarray:
    """Length-256 response vector for one stimulus (frames [T, 3, H, W] or a StimulusSequence)."""
    frames = getattr(stimulus, "frames", stimulus)
    return stage_responses(model, np.asarray(frames)[None])[stage][0]


class ResponseProbe:
    """Batched response collection over many stimuli, all stages at once."""

    def __init__(self, model, size: int = 64, frames: int = 16, batch: int = 8):
        self.model, self.size, self.frames, self.batch = model, size, frames, batch

    def run(self, stimuli: list) -> dict[str, np.ndarray]:
        chunks: dict[str, list] = {}
        for i in range(0, len(stimuli), self.batch):
            frames = np.stack([s.frames for s in stimuli[i:i + self.batch]])
            for k, v in stage_responses(self.model, frames).items():
                chunks.setdefault(k, []).append(v)
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def gratings(self, f_s, f_t, angles):
        speed = f_t / f_s
        return [drifting_gabor(f_s, a, speed, self.size, self.frames, 1.0, np.inf) for a in angles]

    def plaids(self, f_s, f_t, angles):
        speed = f_t / f_s / np.cos(np.pi / 6)  # components then drift at f_t / f_s
        return [plaid(f_s, a, speed, self.size, self.frames, 1.0, np.inf) for a in angles]


def frequency_sweep(probe: ResponseProbe, grid_s=None, grid_t=None) -> dict[str, np.ndarray]:
    """Responses [n_s, n_t, 12, 256] per stage for gratings over the frequency grid."""
    grid_s = frequency_grid() if grid_s is None else np.asarray(grid_s)
    grid_t = frequency_grid() if grid_t is None else np.asarray(grid_t)
    angles = directions()
    stims = [g for fs in grid_s for ft in grid_t for g in probe.gratings(fs, ft, angles)]
    res = probe.run(stims)
    return {k: v.reshape(len(grid_s), len(grid_t), len(angles), -1) for k, v in res.items()}


def preferred_from_sweep(sweep: np.ndarray, grid_s, grid_t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-unit argmax of the tuning-curve s.t.d. over the grid.

    ``sweep`` is [n_s, n_t, 12, U]. Ties go to the lower f_t, then the lower f_s.
    Returns (f_s*, f_t*, flat) where ``flat`` marks units whose curves are all flat.
    """
    sd = sweep.std(axis=2)  # n_s, n_t, U
    n_s, n_t, U = sd.shape
    # order candidates by (f_t, f_s) so argmax picks the first on ties
    order = sd.transpose(1, 0, 2).reshape(n_t * n_s, U)
    best = order.argmax(axis=0)
    # exact-tie handling: argmax already returns the first maximum
    it, is_ = np.divmod(best, n_s)
    flat = np.all(sd <= 0, axis=(0, 1))
    if flat.any():
        warnings.warn(f"{int(flat.sum())} units have flat tuning over the whole grid", RuntimeWarning)
    return np.asarray(grid_s)[is_], np.asarray(grid_t)[it], flat


def preferred_frequency(model, unit: int, stage: str = "stage1", probe: ResponseProbe | None = None,
                        grid_s=None, grid_t=None) -> tuple[float, float]:
    if not 0 <= unit < 256:
        raise ValueError(f"unit index {unit} out of range")
    grid_s = frequency_grid() if grid_s is None else np.asarray(grid_s)
    grid_t = frequency_grid() if grid_t is None else np.asarray(grid_t)
    probe = probe or ResponseProbe(model)
    sweep = frequency_sweep(probe, grid_s, grid_t)[stage]
    fs, ft, _ = preferred_from_sweep(sweep[..., unit:unit + 1], grid_s, grid_t)
    return float(fs[0]), float(ft[0])


# ------------------------------------------------------ pattern/component
def component_prediction(C: TuningCurve, shift: float = np.pi / 6) -> np.ndarray:
    """Mean of the curve shifted by +shift and -shift, circularly interpolated."""
    ang, r = np.asarray(C.angles, float), np.asarray(C.responses, float)
    order = np.argsort(ang)
    a, v = ang[order], r[order]

    def at(x):
        return np.interp(np.mod(x, 2 * np.pi), a, v, period=2 * np.pi)

    return 0.5 * (at(ang + shift) + at(ang - shift))


def _corr(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    return float((dx * dy).sum() / den) if den > 0 else float("nan")


def partial_correlations(r_p: float, r_c: float, r_cp: float):
    """(R_pattern, R_component, saturated) from the three raw correlations."""
    eps = 1e-12
    saturated = abs(r_c) >= 1 - eps or abs(r_cp) >= 1 - eps or abs(r_p) >= 1 - eps
    with np.errstate(divide="ignore", invalid="ignore"):
        den_p = np.sqrt((1 - r_c ** 2) * (1 - r_cp ** 2))
        den_c = np.sqrt((1 - r_p ** 2) * (1 - r_cp ** 2))
        R_p = (r_p - r_c * r_cp) / den_p if den_p > eps else np.sign(r_p - r_c * r_cp) * 1.0
        R_c = (r_c - r_p * r_cp) / den_c if den_c > eps else np.sign(r_c - r_p * r_cp) * 1.0
    return float(R_p), float(R_c), bool(saturated)


def pattern_component_correlation(C: TuningCurve, P: TuningCurve):
    """(R_pattern, R_component, saturated) for grating curve C and plaid curve P."""
    if len(C.responses) != len(P.responses):
        raise ValueError("tuning curves differ in length")
    comp = component_prediction(C)
    r_c = _corr(P.responses, comp)
    r_p = _corr(P.responses, C.responses)
    r_cp = _corr(C.responses, comp)
    if not all(np.isfinite([r_c, r_p, r_cp])):
        return float("nan"), float("nan"), True
    return partial_correlations(r_p, r_c, r_cp)


def fisher_z(R: float, n: int = N_DIRECTIONS) -> float:
    R = float(np.clip(R, -1 + 1e-12, 1 - 1e-12))
    return float(np.arctanh(R) * np.sqrt(n - 3))


def classify_cell(R_pattern: float, R_component: float, n: int = N_DIRECTIONS,
                  margin: float = Z_MARGIN) -> CellClassification:
    """Pattern / component / unclassified by the Fisher-z difference rule."""
    if not (np.isfinite(R_pattern) and np.isfinite(R_component)):
        return CellClassification(R_pattern, R_component, "unclassified")
    zp, zc = fisher_z(R_pattern, n), fisher_z(R_component, n)
    if zp - max(zc, 0.0) > margin:
        label = "pattern"
    elif zc - max(zp, 0.0) > margin:
        label = "component"
    else:
        label = "unclassified"
    return CellClassification(R_pattern, R_component, label)


def circular_variance_selectivity(curve: TuningCurve, harmonic: int = 2) -> float:
    """``|sum A e^{i h theta}| / sum A`` with h = 2 (orientation form) or 1 (direction form)."""
    A = np.asarray(curve.responses, float)
    if (A < 0).any():
        raise ValueError("responses must be nonnegative")
    total = A.sum()
    if total <= 0:
        raise ValueError("all-zero tuning curve")
    return float(np.abs((A * np.exp(1j * harmonic * np.asarray(curve.angles))).sum()) / total)


# ------------------------------------------------------------- population
@dataclass
class UnitAnalysis:
    unit: int
    f_s: float
    f_t: float
    R_pattern: float
    R_component: float
    label: str
    O_ori: float


def analyze_population(model, stages=("stage1", "iter4"), size: int = 64, frames: int = 16,
                       batch: int = 8, grid_s=None, grid_t=None) -> dict[str, list[UnitAnalysis]]:
    """Preferred frequency, plaid classification and selectivity for all 256 units per stage."""
    grid_s = frequency_grid() if grid_s is None else np.asarray(grid_s)
    grid_t = frequency_grid() if grid_t is None else np.asarray(grid_t)
    probe = ResponseProbe(model, size, frames, batch)
    sweep = frequency_sweep(probe, grid_s, grid_t)
    angles = directions()
    out = {}
    cache: dict[tuple[float, float], dict[str, np.ndarray]] = {}
    for stage in stages:
        if stage not in sweep:
            raise KeyError(f"stage {stage!r} not produced by the model (have {sorted(sweep)})")
        fs, ft, _ = preferred_from_sweep(sweep[stage], grid_s, grid_t)
        rows = []
        for u in range(fs.size):
            key = (float(fs[u]), float(ft[u]))
            if key not in cache:
                cache[key] = probe.run(probe.plaids(*key, angles))
            i_s = int(np.argmin(np.abs(grid_s - key[0])))
            i_t = int(np.argmin(np.abs(grid_t - key[1])))
            C = TuningCurve(angles, sweep[stage][i_s, i_t, :, u])
            P = TuningCurve(angles, cache[key][stage][:, u])
            R_p, R_c, _ = pattern_component_correlation(C, P)
            cls = classify_cell(R_p, R_c)
            try:
                O = circular_variance_selectivity(C)
            except ValueError:
                O = float("nan")
            rows.append(UnitAnalysis(u, key[0], key[1], R_p, R_c, cls.label, O))
        out[stage] = rows
    return out


def pattern_fraction(rows: list[UnitAnalysis]) -> float:
    return sum(r.label == "pattern" for r in rows) / max(len(rows), 1)


def analysis_csv(rows: list[UnitAnalysis]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "f_s", "f_t", "R_pattern", "R_component", "label", "O_ori"])
    for r in rows:
        w.writerow([r.unit, f"{r.f_s:.6g}", f"{r.f_t:.6g}", f"{r.R_pattern:.6g}", f"{r.R_component:.6g}",
                    r.label, f"{r.O_ori:.6g}"])
    return buf.getvalue()
