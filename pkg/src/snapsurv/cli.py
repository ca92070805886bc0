"""Command-line entry point: ``snapsurv <subcommand> ...``.

Subcommands: simulate, resample, train, evaluate, predict, study.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import flatten, load_dataset, save_dataset, save_flat_samples
from .energy import survival_curve
from .estimator import EnergySurvivalEstimator, TrainConfig
from .evaluate import evaluate_model
from .resample import GridPolicy, make_grid, resample_with_coverage
from .simulate import SimConfig, simulate_population
from .study import load_study, run_study, sweep, tomllib

logger = logging.getLogger("snapsurv")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = simulate_population(SimConfig(n_individuals=args.n, seed=args.seed,
                                                   id_prefix=args.id_prefix))
    ind = Path(args.individuals or out / "individuals.csv")
    snap = Path(args.snapshots or out / "snapshots.csv")
    save_dataset(dataset, ind, snap)
    truth.to_csv(args.truth or out / "truth.csv")
    print(f"simulated {len(dataset)} individuals "
          f"({int(dataset.events.sum())} failures) -> {ind}, {snap}")
    return 0


def cmd_resample(args) -> int:
    dataset = load_dataset(args.individuals, args.snapshots)
    policy = GridPolicy(args.grid, args.t_min, args.t_max, args.num_points, args.seed, args.grid_formula)
    grid = make_grid(policy, args.epoch)
    view, coverage = resample_with_coverage(dataset, grid)
    flat = flatten(view, args.mode)
    save_flat_samples(flat, args.out, view.names())
    if args.out_individuals and args.out_snapshots:
        save_dataset(view, args.out_individuals, args.out_snapshots)
    print(json.dumps({"grid": grid.tolist(), "n_samples": len(flat), "coverage": coverage.as_dict()},
                     sort_keys=True))
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        with open(args.config, "rb") as fh:
            cfg = TrainConfig.from_dict(tomllib.load(fh).get("train", {}))
    overrides = {
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "grid": args.grid,
        "num_points": args.num_points,
        "t_min": args.t_min,
        "t_max": args.t_max,
        "mode": args.mode,
        "random_state": args.seed,
        "batch_size": args.batch_size,
        "quad_points": args.quad_points,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    cfg = _train_config(args)
    dataset = load_dataset(args.individuals, args.snapshots)
    val = None
    if args.val_individuals or args.val_snapshots:
        if not (args.val_individuals and args.val_snapshots):
            raise ValueError("--val-individuals and --val-snapshots go together")
        val = load_dataset(args.val_individuals, args.val_snapshots)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        result = sweep(dataset, cfg, seed=cfg.random_state, workers=args.workers)
        _write_json(out / "sweep.json", {"learning_rates": result.learning_rates,
                                          "mean_losses": result.mean_losses,
                                          "best_learning_rate": result.best_learning_rate})
        cfg = replace(cfg, learning_rate=result.best_learning_rate)
    est = EnergySurvivalEstimator(**cfg.estimator_params()).fit(dataset, validation=val)
    manifest = dict(est.manifest_, outputs={"checkpoint": "model.ckpt", "losses": "losses.csv"})
    save_checkpoint(out / "model.ckpt", est.model_, {"best_epoch": manifest["best_epoch"],
                                                     "version": __version__})
    _write_json(out / "manifest.json", manifest)
    with (out / "losses.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(manifest["train_losses"], manifest["val_losses"])):
            w.writerow([i, repr(a), repr(b)])
    print(f"best epoch {manifest['best_epoch']} validation loss {manifest['best_val_loss']:.6f} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.individuals, args.snapshots)
    report = evaluate_model(model, dataset, _floats(args.single_times), args.grid_points,
                            args.t_min, args.t_max, args.seed, args.n_eval_times,
                            resample=not args.as_is)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    with (out / "brier.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(report.brier_times, report.brier_scores):
            w.writerow([repr(t), repr(v)])
    print(json.dumps({"quasi_log_likelihood": report.quasi_log_likelihood,
                      "integrated_brier": report.integrated_brier}, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if args.contexts:
        with open(args.contexts, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "t0":
                raise ValueError(f"{args.contexts}: first column must be t0")
            contexts = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    else:
        if args.t0 is None or args.x is None:
            raise ValueError("give --contexts or both --t0 and --x")
        contexts = np.array([[args.t0, *args.x]], dtype=float)
    start, stop, num = args.times
    times = np.linspace(float(start), float(stop), int(num))
    surv = survival_curve(model, times, contexts.reshape(len(contexts), -1))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "t", "S"])
        for i in range(surv.shape[0]):
            for t, s in zip(times, surv[i]):
                w.writerow([i, repr(float(t)), repr(float(s))])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_study(args) -> int:
    cfg = load_study(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    path = run_study(cfg, args.out_dir, workers=args.workers)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snapsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the constant-usage Weibull population")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id-prefix", default="ind")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--individuals")
    p.add_argument("--snapshots")
    p.add_argument("--truth")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("resample", help="resample a dataset on a grid and write flat samples")
    p.add_argument("--individuals", required=True)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--out", required=True, help="flat-sample CSV")
    p.add_argument("--out-individuals")
    p.add_argument("--out-snapshots")
    p.add_argument("--grid", choices=["fixed", "random"], default="fixed")
    p.add_argument("--grid-formula", choices=["stratified", "literal"], default="stratified")
    p.add_argument("--t-min", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--num-points", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--mode", choices=["total", "remaining"], default="total")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("train", help="train an energy survival model")
    p.add_argument("--individuals", required=True)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--val-individuals")
    p.add_argument("--val-snapshots")
    p.add_argument("--config", help="TOML file with a [train] table")
    p.add_argument("--out-dir", default="run")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--quad-points", type=int)
    p.add_argument("--grid", choices=["fixed", "random", "none"])
    p.add_argument("--num-points", type=int)
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--mode", choices=["total", "remaining"])
    p.add_argument("--sweep", action="store_true", help="pick the learning rate by a replicate sweep")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a test dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--individuals", required=True)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--out-dir", default="eval")
    p.add_argument("--single-times", default="0.25,0.5")
    p.add_argument("--grid-points", type=int, default=15)
    p.add_argument("--t-min", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-eval-times", type=int, default=100)
    p.add_argument("--as-is", action="store_true", help="evaluate the snapshots without resampling")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="survival curves from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--contexts", help="CSV with columns t0,f1,...,fd")
    p.add_argument("--t0", type=float)
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--times", nargs=3, metavar=("START", "STOP", "NUM"), default=["0", "2", "41"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("study", help="run a declarative simulated study")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="study")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"snapsurv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
