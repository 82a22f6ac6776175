"""Command-line entry point: ``qgtlab <subcommand> ...``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical
failure (diverged training, singular Jacobian system, degenerate clustering).
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import harness
from .core import GenConfig, export_csv, make_dataset, read_dataset, write_dataset, \
    write_matrix_csv
from .exceptions import (DegenerateClusteringError, InvalidArgumentError, SingularSystemError,
                         TrainingDivergedError)
from .metrics import evaluate
from .nn import COMPLEXITY_LEVELS, build_model, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, calibrate_threshold, decode, train
from .verifiability import binarize_kmeans, collect_jacobians, solve_relaxed, structural_error

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

logger = logging.getLogger("qgtlab")


def _load_config(args, **defaults):
    cfg = harness.ExperimentConfig.load(args.config) if args.config \
        else harness.ExperimentConfig(**defaults)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seeds(args.seed)
    if getattr(args, "n_seeds", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=tuple(cfg.seeds[0] + r for r in range(args.n_seeds)))
    if getattr(args, "smoke", False):
        cfg = cfg.smoke()
    return cfg


def _out_dir(args, name):
    return args.out or os.path.join(harness.output_root(), name)


def cmd_generate(args):
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    gen = GenConfig(cfg.N, cfg.M, cfg.K, cfg.S, cfg.D, seed)
    out = _out_dir(args, "data")
    os.makedirs(out, exist_ok=True)
    for ds in make_dataset(gen, cfg.sizes):
        write_dataset(ds, os.path.join(out, f"{ds.split}.qgt"))
        if args.csv:
            export_csv(ds, os.path.join(out, f"{ds.split}.csv"))
    write_matrix_csv(make_dataset(gen, (0, 0, 0))[0].pooling, os.path.join(out, "pooling.csv"))
    print(out)


def cmd_train(args):
    train_set = read_dataset(os.path.join(args.data, "train.qgt"), "train")
    val_set = read_dataset(os.path.join(args.data, "val.qgt"), "val")
    M, N = train_set.pooling.shape
    if args.hidden is not None:
        hidden, level = tuple(args.hidden), None
    else:
        if args.level not in COMPLEXITY_LEVELS:
            raise InvalidArgumentError(f"level must be 1-7, got {args.level}")
        hidden, level = COMPLEXITY_LEVELS[args.level], args.level
    seed = train_set.gen_config.seed if args.seed is None else args.seed
    tcfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr,
                       max_epochs=args.max_epochs, patience=args.patience, seed=seed)
    model = build_model(M, N, hidden, seed, complexity_level=level)
    model, history = train(model, train_set, val_set, tcfg)
    tau = calibrate_threshold(model, val_set)
    out = args.out or os.path.join(harness.output_root(), "model.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_checkpoint(out, model, threshold=tau, train_config=tcfg.as_dict(),
                    gen_config=train_set.gen_config.as_dict())
    history.to_csv(os.path.splitext(out)[0] + "_history.csv")
    print(json.dumps({"checkpoint": out, "threshold": tau, "epochs": history.epochs_run,
                      "best_epoch": history.best_epoch}))


def cmd_eval(args):
    model, meta = load_checkpoint(args.model)
    data = read_dataset(args.data)
    report = evaluate(data.signals, decode(model, data.measurements, meta["threshold"]))
    result = {"count": report.count, **report.means()}
    print(json.dumps(result, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(",".join(result) + "\n" + ",".join(repr(v) for v in result.values()) + "\n")


def cmd_verify(args):
    model, _ = load_checkpoint(args.model)
    data = read_dataset(args.data)
    est = solve_relaxed(collect_jacobians(model, data.measurements, args.T))
    recovered = binarize_kmeans(est)
    error = structural_error(recovered, data.pooling)
    out = _out_dir(args, "verify")
    os.makedirs(out, exist_ok=True)
    write_matrix_csv(est.values, os.path.join(out, "A_relaxed.csv"), fmt="%.17g")
    write_matrix_csv(recovered.values, os.path.join(out, "A_hat.csv"))
    summary = {"T": args.T, "ridge_applied": est.ridge_applied, "condition": est.condition,
               "mismatch_percent": error}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))


def _sweep(args, runner, name, values, **defaults):
    cfg = _load_config(args, **defaults)
    if args.values:
        values = tuple(args.values)
    elif cfg.sweep_values:
        values = cfg.sweep_values
    out = _out_dir(args, name)
    rows = runner(cfg, values, out_dir=os.path.join(out, "runs"))
    paths = harness.emit_outputs(rows, out, name)
    for row in rows:
        print(f"{row.sweep_axis}={row.sweep_value}: F1 {row.f1:.4f} SR {row.success_rate:.4f} "
              f"error {row.structural_error:.3f}%")
    print(paths["results"])


def cmd_sweep_m(args):
    _sweep(args, harness.run_sweep_measurements, "sweep_m", harness.DEFAULT_M_GRID, S=10.0)


def cmd_sweep_s(args):
    _sweep(args, harness.run_sweep_noise, "sweep_s", harness.DEFAULT_NOISE_GRID)


def cmd_complexity(args):
    _sweep(args, harness.run_complexity_study, "complexity", tuple(COMPLEXITY_LEVELS))


def cmd_plot(args):
    records = harness.read_results_csv(args.results)
    if not records:
        raise InvalidArgumentError(f"{args.results} has no rows")
    out = args.out or os.path.splitext(args.results)[0] + ".svg"
    harness.plot_sweep(records, out)
    print(out)


def build_parser():
    parser = argparse.ArgumentParser(prog="qgtlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        p.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
        p.add_argument("--n-seeds", type=int, help="number of seeds to average over")
        p.add_argument("--smoke", action="store_true", help="divide dataset sizes by 4")
        p.add_argument("--out", help=f"output directory (default ${harness.OUTPUT_ROOT_ENV})")

    p = sub.add_parser("generate", help="write train/val/test datasets")
    experiment_flags(p)
    p.add_argument("--csv", action="store_true", help="also export CSV copies")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a decoder on a generated dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--hidden", type=int, nargs="*")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a dataset and report metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="optional CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="recover the pooling matrix from Jacobians")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    for name, func, help_ in (("sweep-m", cmd_sweep_m, "sweep the number of tests M"),
                              ("sweep-s", cmd_sweep_s, "sweep the noise ratio S/N"),
                              ("complexity", cmd_complexity, "complexity levels 1-7")):
        p = sub.add_parser(name, help=help_)
        experiment_flags(p)
        p.add_argument("--values", type=float, nargs="+", help="override the sweep grid")
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="re-draw the SVG for a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (InvalidArgumentError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"qgtlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, SingularSystemError, DegenerateClusteringError,
            np.linalg.LinAlgError) as exc:
        print(f"qgtlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
