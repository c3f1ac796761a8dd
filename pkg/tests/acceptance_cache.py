"""Compute-or-load store for the expensive acceptance artifacts (trained models, ablation tables).

Training runs are cached as checkpoints plus a JSON record of their settings and
wall time; everything downstream of a checkpoint is recomputed on each run. Set
DUALMOTION_RETRAIN=1 to ignore the cache, or DUALMOTION_CACHE to move it.

Run directly to fill the cache ahead of a test session:

    python tests/acceptance_cache.py toy
    python tests/acceptance_cache.py ablation 0 1 2
"""

from __future__ import annotations

import csv
import io
import os
import sys
import time
from pathlib import Path

from dualmotion import io as fio
from dualmotion.model import DualMotionModel
from dualmotion.training import (ABLATION_CONFIGS, AblationReport, ablation_benchmark, ablation_config,
                                 benchmark_correlations, toy_recipe, train)

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("DUALMOTION_CACHE", ROOT / ".acceptance_cache"))
RETRAIN = os.environ.get("DUALMOTION_RETRAIN", "") == "1"

TOY = {"seed": 0, "c_steps": 2000, "bc_steps": 500, "batch_size": 2, "lr": 1e-3}
ABLATION = {"steps": 300, "batch_size": 2, "lr": 1e-3}
N_PER_KIND = 16  # benchmark sequences per modulation


def _fresh(record: Path, settings: dict) -> bool:
    if RETRAIN or not record.exists():
        return False
    return fio.read_json(record).get("settings") == settings


def toy_record() -> dict:
    """Trained C and B+C models with their wall times; trains on a cache miss."""
    d = CACHE / "toy"
    rec = d / "record.json"
    if not _fresh(rec, TOY):
        def progress(step, loss, epe, elapsed):
            if step % 100 == 0:
                print(f"toy step {step} loss {loss:.4g} {epe} {elapsed:.0f}s", file=sys.stderr, flush=True)

        res = toy_recipe(**TOY, progress=progress)
        res.model_c.save(d / "model_c.ckpt")
        res.model_bc.save(d / "model_bc.ckpt")
        fio.write_text(d / "log.csv", _rows_csv(res.log_rows))
        fio.write_json(rec, {"settings": TOY, "seconds_c": res.seconds_c, "seconds_bc": res.seconds_bc,
                             "epe_c": res.epe_c, "epe_bc": res.epe_bc})
    out = dict(fio.read_json(rec))
    out["model_c"] = DualMotionModel.load(d / "model_c.ckpt")
    out["model_bc"] = DualMotionModel.load(d / "model_bc.ckpt")
    return out


def ablation_model(seed: int, channel: str, material: str) -> tuple[DualMotionModel, float]:
    """One trained ablation cell and its training wall time."""
    d = CACHE / "ablation"
    stem = f"seed{seed}_{channel}_{material}"
    rec = d / f"{stem}.json"
    if not _fresh(rec, ABLATION):
        t0 = time.time()
        res = train(ablation_config(channel, material, seed, ABLATION["steps"], ABLATION["batch_size"],
                                    ABLATION["lr"]))
        res.model.save(d / f"{stem}.ckpt")
        fio.write_json(rec, {"settings": ABLATION, "seconds": time.time() - t0})
        print(f"ablation seed {seed} {channel}+{material} trained", file=sys.stderr, flush=True)
    return DualMotionModel.load(d / f"{stem}.ckpt"), fio.read_json(rec)["seconds"]


def ablation_record(seed: int) -> tuple[AblationReport, float]:
    """Ablation report for one seed, scored afresh from cached models, and the total training time."""
    bench = ablation_benchmark(seed, N_PER_KIND)
    corr, total = {}, 0.0
    for channel, material in ABLATION_CONFIGS:
        model, sec = ablation_model(seed, channel, material)
        corr[(channel, material)] = benchmark_correlations(model, bench)
        total += sec
    return AblationReport(seed, corr), total


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


if __name__ == "__main__":
    what = sys.argv[1] if len(sys.argv) > 1 else "toy"
    if what == "toy":
        r = toy_record()
        print({k: v for k, v in r.items() if not k.startswith("model")})
    elif what == "ablation":
        for s in (int(a) for a in sys.argv[2:] or ["0", "1", "2"]):
            rep, sec = ablation_record(s)
            print(s, {f"{c}+{m}": round(rep.mean(c, m), 4) for c, m in rep.correlations}, round(sec))
    else:
        raise SystemExit(f"unknown target {what!r}")
