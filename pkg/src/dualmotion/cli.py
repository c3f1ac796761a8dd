"""Command-line entry point: ``dualmotion <subcommand> [options]``.

Every subcommand is deterministic given ``--seed``. Errors exit with status 1
(2 for usage errors) and print one line ``error: <Type>: <reason>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .config import ConfigError, dump_train_config, load_train_config
from .model import DualMotionModel
from .stimuli import MODULATIONS

log = logging.getLogger("dualmotion")

CHANNEL_ALIASES = {"first": "first_order", "first_order": "first_order", "dual": "dual"}
GENSTIM_KINDS = ("grating", "plaid", "A", "B", "C", "D", "E")


class CLIError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers
def _channel(name: str) -> str:
    try:
        return CHANNEL_ALIASES[name]
    except KeyError:
        raise argparse.ArgumentTypeError(f"channel must be first or dual, got {name!r}") from None


def _model(args) -> DualMotionModel:
    if getattr(args, "checkpoint", None):
        model = DualMotionModel.load(args.checkpoint)
        if args.iters is not None:
            model.iterations = args.iters
        return model
    return DualMotionModel(args.channel, args.seed, iterations=args.iters or 4)


def _frames(path) -> np.ndarray:
    seq = fio.load_sequence(path)
    return seq.frames


def _write_seq(seq, out: Path, tag: str) -> None:
    d = out / tag
    fio.save_sequence(seq, d)
    if seq.gt_flow is not None:
        for t, F in enumerate(seq.gt_flow):
            fio.write_flo(F.astype(np.float32), d / f"flow_{t:04d}.flo")
    fio.write_json(d / "meta.json", seq.meta)


# ------------------------------------------------------------ subcommands
def cmd_genstim(args) -> None:
    from . import stimuli as S
    from .training import sample_dataset

    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    bench = S.second_order_benchmark(args.n, args.seed, args.size, kinds=(args.kind,)) \
        if args.kind in MODULATIONS else None
    for i in range(args.n):
        if args.kind == "grating":
            seq = S.drifting_gabor(args.f_s, rng.uniform(0, 2 * np.pi), args.speed, args.size, args.frames)
        elif args.kind == "plaid":
            seq = S.plaid(args.f_s, rng.uniform(0, 2 * np.pi), args.speed, args.size, args.frames)
        elif args.kind in MODULATIONS:
            seq = bench[args.kind][i]
        else:
            seq = sample_dataset(args.kind, args.seed * 100_003 + i, args.size, args.frames)
        _write_seq(seq, out, f"{args.kind}_{i:03d}")
    print(f"wrote {args.n} {args.kind} sequence(s) to {out}")


def cmd_train(args) -> None:
    from .training import Phase, train

    cfg = load_train_config(args.config) if args.config else None
    if cfg is None:
        from .training import TrainConfig
        cfg = TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iters is not None:
        cfg.iterations = args.iters
    if args.channel_given:
        cfg.channel = args.channel
    if args.steps is not None:
        cfg.phases = [Phase(p.datasets, args.steps) for p in cfg.phases[:1]]
    out = Path(args.out)

    def progress(step, loss, epe, elapsed):
        if step % max(args.log_every, 1) == 0:
            log.info("step %d loss %.4g %s (%.0fs)", step, loss, f"epe {epe}" if epe else "", elapsed)

    res = train(cfg, progress=progress)
    res.model.save(out / "model.ckpt", {"train_config": cfg.to_dict()})
    fio.write_text(out / "log.csv", res.log_csv())
    fio.write_json(out / "config.json", cfg.to_dict())
    print(f"checkpoint {out / 'model.ckpt'}")


def cmd_infer(args) -> None:
    model = _model(args)
    flow = model.predict(_frames(args.frames)[None])[0]
    out = Path(args.out)
    fio.write_flo(flow.astype(np.float32), out / "flow.flo")
    fio.write_png(fio.flow_to_image(flow), out / "flow.png")
    print(f"flow {flow.shape[0]}x{flow.shape[1]} -> {out / 'flow.flo'}")


def cmd_segment(args) -> None:
    from . import tensor as T
    from .segmentation import segment

    model = _model(args)
    frames = _frames(args.frames)
    with T.no_grad():
        out = model.forward(frames[None])
    A = out.adjacency.data[0].astype(np.float64)
    h, w = out.energies["Em"].shape[-2:]
    seg = segment((A + A.T) / 2, (h, w), refine=not args.no_refine, seed=args.seed)
    full = seg.upsampled(8)
    dest = Path(args.out)
    fio.write_pgm(full.astype(bool), dest / "mask.pgm")
    fio.write_json(dest / "segment.json", {"grid": [h, w], "foreground": int(seg.foreground.sum()),
                                           "mask": seg.foreground.astype(int).tolist()})
    print(f"mask {full.shape[0]}x{full.shape[1]} foreground {int(full.sum())} px -> {dest / 'mask.pgm'}")


def cmd_analyze(args) -> None:
    from .neurophys import analysis_csv, analyze_population, frequency_grid, pattern_fraction

    model = _model(args)
    stages = tuple(args.stages.split(","))
    grid = frequency_grid(args.grid)
    res = analyze_population(model, stages, grid_s=grid, grid_t=grid)
    out = Path(args.out)
    summary = {}
    for stage, rows in res.items():
        fio.write_text(out / f"units_{stage}.csv", analysis_csv(rows))
        summary[stage] = pattern_fraction(rows)
    fio.write_json(out / "summary.json", {"pattern_fraction": summary})
    print(" ".join(f"{k}:{v:.3f}" for k, v in summary.items()))


def cmd_eval(args) -> None:
    from .metrics import compare_flows, comparisons_csv

    pred = fio.read_flo(args.pred)
    ref = fio.read_flo(args.ref)
    gt = fio.read_flo(args.gt) if args.gt else None
    row = compare_flows(pred, ref, gt)
    text = comparisons_csv({Path(args.pred).stem: row})
    if args.out:
        fio.write_text(args.out, text)
    sys.stdout.write(text)


def cmd_ablate(args) -> None:
    from .training import ablation_suite

    def progress(ch, mat, rs):
        log.info("%s+%s mean r %.3f", ch, mat, float(np.mean(list(rs.values()))))

    rep = ablation_suite(args.seed, steps=args.steps, n_per_kind=args.n_per_kind, progress=progress)
    text = rep.to_csv()
    if args.out:
        fio.write_text(args.out, text)
    sys.stdout.write(text)


# ----------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualmotion", description="Two-stage motion model toolkit.")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--dump-config", action="store_true", help="print default training config and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp, model=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--iters", type=int, default=None, help="Stage II iterations")
        if model:
            sp.add_argument("--channel", type=_channel, default="first_order", help="first | dual")
            sp.add_argument("--checkpoint", default=None)

    g = sub.add_parser("genstim", help="generate stimulus sequences")
    g.add_argument("--kind", required=True, choices=GENSTIM_KINDS + MODULATIONS)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--f-s", dest="f_s", type=float, default=0.08)
    g.add_argument("--speed", type=float, default=1.0)
    common(g, model=False)
    g.set_defaults(func=cmd_genstim)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None, help="override: single phase of this many steps")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--channel", type=_channel, default=None)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="estimate flow for a frame directory")
    i.add_argument("--frames", required=True)
    i.add_argument("--out", required=True)
    common(i)
    i.set_defaults(func=cmd_infer)

    s = sub.add_parser("segment", help="spectral segmentation of a frame directory")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-refine", action="store_true")
    common(s)
    s.set_defaults(func=cmd_segment)

    a = sub.add_parser("analyze", help="unit tuning and pattern/component analysis")
    a.add_argument("--out", required=True)
    a.add_argument("--stages", default="stage1,iter4")
    a.add_argument("--grid", type=int, default=8)
    common(a)
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("eval", help="compare flow files")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--gt", default=None)
    e.add_argument("--out", default=None)
    common(e, model=False)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("ablate", help="channel x material ablation on the second-order benchmark")
    b.add_argument("--steps", type=int, default=300)
    b.add_argument("--n-per-kind", type=int, default=8)
    b.add_argument("--out", default=None)
    common(b, model=False)
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.dump_config:
        sys.stdout.write(dump_train_config())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("error: UsageError: no subcommand given", file=sys.stderr)
        return 2
    if args.command == "train":
        args.channel_given = args.channel is not None
    try:
        args.func(args)
    except (ConfigError, CLIError, ValueError, KeyError, OSError, RuntimeError) as exc:
        reason = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {exc.__class__.__name__}: {reason}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
