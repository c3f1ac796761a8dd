"""Supervised training: sequence loss, projection clamps, curricula and ablations."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .model import DualMotionModel
from .stimuli import proxy_nondiffuse_dataset, toy_dataset
from .tensor import Adam, NonFiniteGradientError, Tensor

log = logging.getLogger(__name__)

DATASETS = ("A", "B", "C", "D", "E")


class TrainingError(RuntimeError):
    pass


@dataclass
class Phase:
    datasets: tuple[str, ...]
    steps: int


@dataclass
class TrainConfig:
    phases: list[Phase] = field(default_factory=lambda: [Phase(("B", "C"), 10000), Phase(DATASETS, 10000)])
    channel: str = "dual"
    material: str = "diffuse"  # which proxy set stands in for "D/E" when a phase names "M"
    iterations: int = 4
    lr: float = 2e-4
    lr_schedule: str = "constant"  # or "cosine": decays to 10% of lr over all phases
    batch_size: int = 4
    seed: int = 0
    gamma: float = 0.8
    size: int = 64
    frames: int = 15
    eval_every: int = 0
    eval_set: str = "C"
    n_eval: int = 16
    dtype: str = "float32"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phases"] = [{"datasets": list(p.datasets), "steps": p.steps} for p in self.phases]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "phases" in d:
            d["phases"] = [Phase(tuple(p["datasets"]), int(p["steps"])) for p in d["phases"]]
        return cls(**d)


# ---------------------------------------------------------------- loss
def loss_weights(n_points: int, gamma: float = 0.8) -> np.ndarray:
    """``gamma ** (K - k)`` for decode points k = 0..K (Stage I is k = 0)."""
    K = n_points - 1
    return gamma ** (K - np.arange(n_points, dtype=float))


def sequence_loss(preds, gt, weights=None, gamma: float = 0.8) -> Tensor:
    """``sum_k w_k * mean((F_k - gt)^2)`` over decode points.

    ``preds`` holds one flow per decode point, each [B, 2, H, W]; ``gt`` has
    the same shape.
    """
    if len(preds) == 0:
        raise ValueError("sequence_loss needs at least one decode point")
    w = loss_weights(len(preds), gamma) if weights is None else np.asarray(weights, float)
    if len(w) != len(preds):
        raise ValueError(f"{len(w)} weights for {len(preds)} decode points")
    gt = np.asarray(gt)
    total = None
    for wk, F in zip(w, preds):
        F = T.as_tensor(F)
        if F.shape != gt.shape:
            raise ValueError(f"prediction shape {F.shape} does not match ground truth {gt.shape}")
        term = T.square(F - Tensor(gt.astype(F.dtype))).mean() * float(wk)
        total = term if total is None else total + term
    return total


def clamp_params(model: DualMotionModel) -> DualMotionModel:
    model.clamp()
    return model


# ---------------------------------------------------------------- data
def sample_dataset(name: str, seed: int, size: int, frames: int, material: str = "diffuse"):
    """One sequence from dataset ``name`` (A, B, C, D, E) for a given seed."""
    if name in ("B", "C"):
        return toy_dataset(name, 1, seed, size, frames)[0]
    if name == "D":
        return proxy_nondiffuse_dataset(1, seed, "diffuse", size, frames)[0]
    if name == "E":
        return proxy_nondiffuse_dataset(1, seed, "nondiffuse", size, frames)[0]
    if name == "M":
        return proxy_nondiffuse_dataset(1, seed, material, size, frames)[0]
    if name == "A":
        # procedural textured scenes stand in for pseudo-labelled natural video
        return proxy_nondiffuse_dataset(1, seed + 7919, "diffuse", size, frames)[0]
    raise ValueError(f"unknown dataset {name!r}")


def make_batch(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into frames [B, T, 3, H, W] and midpoint GT [B, 2, H, W]."""
    frames = np.stack([s.frames for s in seqs])
    mid = frames.shape[1] // 2
    gt = np.stack([np.moveaxis(s.gt_flow[mid], -1, 0) for s in seqs])
    return frames, gt


def heldout_set(name: str, n: int, seed: int, size: int, frames: int, material: str = "diffuse"):
    base = 10_000_019 + 97 * seed
    return [sample_dataset(name, base + i, size, frames, material) for i in range(n)]


def evaluate_epe(model: DualMotionModel, seqs, batch_size: int = 4) -> float:
    """Mean endpoint error of the final flow at the midpoint frame."""
    errs = []
    for i in range(0, len(seqs), batch_size):
        frames, gt = make_batch(seqs[i:i + batch_size])
        pred = model.predict(frames)  # B, H, W, 2
        errs.append(np.sqrt(((pred - np.moveaxis(gt, 1, -1)) ** 2).sum(-1)).mean(axis=(1, 2)))
    return float(np.concatenate(errs).mean())


# ---------------------------------------------------------------- train
@dataclass
class TrainResult:
    model: DualMotionModel
    log_rows: list
    evals: list

    def log_csv(self) -> str:
        buf = io.StringIO()
        if self.log_rows:
            w = csv.DictWriter(buf, fieldnames=list(self.log_rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(self.log_rows)
        return buf.getvalue()


def scheduled_lr(config: TrainConfig, step: int) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    if config.lr_schedule == "cosine":
        total = max(sum(p.steps for p in config.phases), 1)
        frac = min(step / total, 1.0)
        return config.lr * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))
    raise ValueError(f"unknown lr schedule {config.lr_schedule!r}")


def train(config: TrainConfig, model: DualMotionModel | None = None, progress=None) -> TrainResult:
    """Run the configured curriculum; deterministic given ``config.seed``."""
    dtype = np.dtype(config.dtype)
    if model is None:
        model = DualMotionModel(config.channel, config.seed, dtype, config.iterations)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    held = heldout_set(config.eval_set, config.n_eval, config.seed, config.size, config.frames, config.material) \
        if config.eval_every else []
    rows, evals = [], []
    step = 0
    ss = np.random.SeedSequence([config.seed, 0x7A1])
    t0 = time.time()
    for p_i, phase in enumerate(config.phases):
        for _ in range(phase.steps):
            rng = np.random.default_rng(ss.spawn(1)[0])
            names = rng.choice(list(phase.datasets), size=config.batch_size)
            seeds = rng.integers(0, 2**31 - 1, size=config.batch_size)
            seqs = [sample_dataset(n, int(s), config.size, config.frames, config.material) for n, s in zip(names, seeds)]
            frames, gt = make_batch(seqs)
            out = model.forward(frames, config.iterations)
            loss = sequence_loss(out.flows, gt, gamma=config.gamma)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise TrainingError(f"non-finite loss at step {step} (batch id {step}, phase {p_i})")
            opt.zero_grad()
            T.backward(loss)
            opt.lr = scheduled_lr(config, step)
            try:
                opt.step()
            except NonFiniteGradientError as exc:
                raise TrainingError(f"non-finite gradient at step {step} (batch id {step}): {exc}") from exc
            model.clamp()
            row = {"step": step, "phase": p_i, "loss": f"{lv:.6g}", "epe": ""}
            step += 1
            if config.eval_every and (step % config.eval_every == 0 or step == sum(p.steps for p in config.phases)):
                e = evaluate_epe(model, held)
                row["epe"] = f"{e:.6g}"
                evals.append((step, e))
            rows.append(row)
            if progress is not None:
                progress(step, lv, row["epe"], time.time() - t0)
    return TrainResult(model, rows, evals)


# ---------------------------------------------------------------- ablation
ABLATION_CONFIGS = (("first_order", "diffuse"), ("first_order", "nondiffuse"),
                    ("dual", "diffuse"), ("dual", "nondiffuse"))


def benchmark_correlations(model: DualMotionModel, benchmark: dict, batch_size: int = 4) -> dict[str, float]:
    """Pearson r between mean predicted flow inside the moving disk and the carrier velocity.

    Evaluated at the sequence midpoint. u and v are each centred over the
    sequences of a modulation and then stacked into one sample, so a constant
    offset in either component cannot produce a correlation on its own.
    """
    from .metrics import UndefinedCorrelationError, pearson

    out = {}
    for kind, seqs in benchmark.items():
        pred, gt = [], []
        for i in range(0, len(seqs), batch_size):
            chunk = seqs[i:i + batch_size]
            frames = np.stack([s.frames for s in chunk])
            mid = frames.shape[1] // 2
            flows = model.predict(frames)
            for s, F in zip(chunk, flows):
                region = s.region[mid]
                pred.append(F[region].mean(axis=0))
                gt.append(np.asarray(s.meta["carrier"])[mid])
        pred, gt = np.array(pred), np.array(gt)
        pred, gt = pred - pred.mean(axis=0), gt - gt.mean(axis=0)
        try:
            out[kind] = pearson(pred.ravel(), gt.ravel())
        except UndefinedCorrelationError:
            out[kind] = float("nan")
    return out


@dataclass
class AblationReport:
    seed: int
    correlations: dict  # {(channel, material): {kind: r}}

    def mean(self, channel: str, material: str) -> float:
        return float(np.mean(list(self.correlations[(channel, material)].values())))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "channel", "material", "modulation", "r"])
        for (ch, mat), rs in self.correlations.items():
            for kind, r in rs.items():
                w.writerow([self.seed, ch, mat, kind, f"{r:.6g}"])
        return buf.getvalue()


def ablation_config(channel: str, material: str, seed: int = 0, steps: int = 300, batch_size: int = 2,
                    lr: float = 1e-3, size: int = 64) -> TrainConfig:
    """Training recipe of one ablation cell: the material proxy only, cosine schedule."""
    from .stimuli import CARRIER_FRAMES

    return TrainConfig(phases=[Phase(("M",), steps)], channel=channel, material=material, lr=lr,
                       lr_schedule="cosine", batch_size=batch_size, seed=seed, size=size, frames=CARRIER_FRAMES - 1)


def ablation_benchmark(seed: int = 0, n_per_kind: int = 8, size: int = 64) -> dict:
    """Second-order benchmark held out from every training seed."""
    from .stimuli import second_order_benchmark

    return second_order_benchmark(n_per_kind, seed + 500_000, size)


def ablation_suite(seed: int = 0, steps: int = 300, batch_size: int = 2, lr: float = 1e-3,
                   n_per_kind: int = 8, size: int = 64, configs=ABLATION_CONFIGS,
                   progress=None) -> AblationReport:
    """Train {first_order, dual} x {diffuse, nondiffuse} on the material proxies and score the benchmark."""
    bench = ablation_benchmark(seed, n_per_kind, size)
    report = {}
    for channel, material in configs:
        res = train(ablation_config(channel, material, seed, steps, batch_size, lr, size))
        report[(channel, material)] = benchmark_correlations(res.model, bench)
        if progress is not None:
            progress(channel, material, report[(channel, material)])
    return AblationReport(seed, report)


# ---------------------------------------------------------------- toy recipe
@dataclass
class ToyRecipeResult:
    model_c: DualMotionModel
    model_bc: DualMotionModel
    epe_c: float  # held-out full-field gratings after the C phase
    epe_bc: float  # held-out translating shapes after the B+C phase
    seconds_c: float
    seconds_bc: float
    log_rows: list


def toy_recipe(seed: int = 0, c_steps: int = 2000, bc_steps: int = 500, batch_size: int = 2, lr: float = 1e-3,
               n_eval: int = 32, progress=None) -> ToyRecipeResult:
    """First-order model trained on dataset C, then continued on the B+C curriculum.

    Both phases run at 64x64 with a cosine schedule; EPE is measured on
    held-out sets that the training seeds never touch.
    """
    cfg_c = TrainConfig(phases=[Phase(("C",), c_steps)], channel="first_order", lr=lr, lr_schedule="cosine",
                        batch_size=batch_size, seed=seed)
    t0 = time.time()
    res_c = train(cfg_c, progress=progress)
    sec_c = time.time() - t0
    epe_c = evaluate_epe(res_c.model, heldout_set("C", n_eval, seed, cfg_c.size, cfg_c.frames))

    model = DualMotionModel(res_c.model.channel, seed, res_c.model.dtype, res_c.model.iterations)
    model.load_state_dict(res_c.model.state_dict())
    cfg_bc = TrainConfig(phases=[Phase(("B", "C"), bc_steps)], channel="first_order", lr=lr / 2,
                         lr_schedule="cosine", batch_size=batch_size, seed=seed + 1)
    t0 = time.time()
    res_bc = train(cfg_bc, model=model, progress=progress)
    sec_bc = time.time() - t0
    epe_bc = evaluate_epe(res_bc.model, heldout_set("B", n_eval, seed, cfg_bc.size, cfg_bc.frames))
    return ToyRecipeResult(res_c.model, res_bc.model, epe_c, epe_bc, sec_c, sec_bc, res_c.log_rows + res_bc.log_rows)
