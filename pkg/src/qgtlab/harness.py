"""Experiment orchestration: single runs, sweeps, the complexity study, outputs.

A run with seed ``s`` uses ``s`` for the pooling matrix, the data, the
weight initialization and the training stream alike.  Multi-seed points
average over ``config.seeds``.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .core import GenConfig, make_dataset, write_matrix_csv
from .exceptions import InvalidArgumentError
from .metrics import evaluate
from .nn import COMPLEXITY_LEVELS, build_model, save_checkpoint
from .trainer import TrainConfig, calibrate_threshold, decode, train
from .verifiability import binarize_kmeans, collect_jacobians, solve_relaxed, structural_error

logger = logging.getLogger(__name__)

TABLE2_SIZES = (119205, 14900, 14900)
SMOKE_DIVISOR = 4
DEFAULT_M_GRID = (20, 25, 30, 35, 40)
DEFAULT_NOISE_GRID = (0.04, 0.08, 0.12, 0.16, 0.20)
SWEEP_AXES = ("M", "noise_ratio", "level")
OUTPUT_ROOT_ENV = "QGT_OUTPUT_ROOT"

RESULT_COLUMNS = (
    "method", "sweep_axis", "sweep_value", "N", "M", "K", "S", "D", "level", "hidden",
    "n_train", "n_val", "n_test", "T", "seeds", "precision", "recall", "f1",
    "success_rate", "mse", "structural_error", "structural_error_noiseless", "tau",
    "config_hash",
)
RUN_COLUMNS = (
    "method", "sweep_axis", "sweep_value", "seed", "precision", "recall", "f1",
    "success_rate", "mse", "structural_error", "structural_error_noiseless", "tau",
    "epochs", "best_epoch", "ridge_applied", "condition", "config_hash",
)
PLOT_MEASURES = ("f1", "precision", "recall", "mse", "success_rate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a result row."""

    N: int = 100
    M: int = 35
    K: float = 6.0
    S: float = 6.0
    D: int = 1
    sizes: tuple = TABLE2_SIZES
    level: int = 5
    hidden: tuple = None
    seeds: tuple = (0, 1, 2, 3, 4)
    train: TrainConfig = TrainConfig()
    T: int = 1000
    sweep_axis: str = None
    sweep_values: tuple = ()
    method: str = "mlp"

    def __post_init__(self):
        GenConfig(self.N, self.M, self.K, self.S, self.D)
        if len(self.sizes) != 3 or any(int(s) < 0 for s in self.sizes):
            raise InvalidArgumentError(f"sizes must be three non-negative counts, got {self.sizes}")
        if self.hidden is None and self.level not in COMPLEXITY_LEVELS:
            raise InvalidArgumentError(f"level must be 1-7, got {self.level!r}")
        if not self.seeds:
            raise InvalidArgumentError("seeds must be non-empty")
        if self.T < 1:
            raise InvalidArgumentError("T must be at least 1")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise InvalidArgumentError(f"sweep_axis must be one of {SWEEP_AXES}")
            if not self.sweep_values:
                raise InvalidArgumentError("sweep_values must be non-empty")

    @property
    def hidden_layers(self):
        return tuple(self.hidden) if self.hidden is not None else COMPLEXITY_LEVELS[self.level]

    @property
    def noise_ratio(self):
        return self.S / self.N

    def smoke(self):
        """Same experiment with every dataset size divided by four."""
        return dataclasses.replace(self, sizes=tuple(s // SMOKE_DIVISOR for s in self.sizes))

    def with_seeds(self, base_seed):
        return dataclasses.replace(self, seeds=tuple(base_seed + r for r in range(len(self.seeds))))

    def at(self, axis, value):
        """The config of one sweep point."""
        if axis == "M":
            return dataclasses.replace(self, M=int(value))
        if axis == "noise_ratio":
            return dataclasses.replace(self, S=float(value) * self.N)
        if axis == "level":
            return dataclasses.replace(self, level=int(value), hidden=None)
        raise InvalidArgumentError(f"unknown sweep axis {axis!r}")

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["sizes"] = list(self.sizes)
        doc["seeds"] = list(self.seeds)
        doc["sweep_values"] = list(self.sweep_values)
        doc["hidden"] = None if self.hidden is None else list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidArgumentError(f"unknown config fields: {sorted(unknown)}")
        if "train" in doc and isinstance(doc["train"], dict):
            doc["train"] = TrainConfig(**doc["train"])
        for key in ("sizes", "seeds", "sweep_values"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if doc.get("hidden") is not None:
            doc["hidden"] = tuple(doc["hidden"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InvalidArgumentError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"{path}: {exc}") from exc

    def config_hash(self):
        """Short digest of the config, seeds and sweep values excluded."""
        doc = self.to_dict()
        for key in ("seeds", "sweep_axis", "sweep_values"):
            doc.pop(key)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunResult:
    seed: int
    precision: float
    recall: float
    f1: float
    success_rate: float
    mse: float
    structural_error: float
    structural_error_noiseless: float
    tau: float
    epochs: int
    best_epoch: int
    ridge_applied: bool
    condition: float
    wall_seconds: float


@dataclass
class ResultRow:
    config: ExperimentConfig
    runs: list
    sweep_axis: str = None
    sweep_value: float = None
    wall_seconds: float = 0.0
    means: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.means:
            keys = ("precision", "recall", "f1", "success_rate", "mse", "structural_error",
                    "structural_error_noiseless", "tau")
            self.means = {k: float(np.mean([getattr(r, k) for r in self.runs])) for k in keys}
            self.wall_seconds = float(sum(r.wall_seconds for r in self.runs))

    def __getattr__(self, name):
        means = self.__dict__.get("means", {})
        if name in means:
            return means[name]
        raise AttributeError(name)


def _require(cfg):
    n_train, n_val, n_test = cfg.sizes
    if n_train == 0 or n_val == 0:
        raise InvalidArgumentError("training and validation splits must be non-empty")
    if n_test < cfg.T:
        raise InvalidArgumentError(f"test split ({n_test}) is smaller than T={cfg.T}")


def run_seed(cfg, seed, out_dir=None):
    """Full pipeline for one seed: data, training, calibration, metrics, recovery."""
    _require(cfg)
    started = time.perf_counter()
    gen = GenConfig(cfg.N, cfg.M, cfg.K, cfg.S, cfg.D, seed)
    train_set, val_set, test_set = make_dataset(gen, cfg.sizes)
    model = build_model(cfg.M, cfg.N, cfg.hidden_layers, seed,
                        complexity_level=cfg.level if cfg.hidden is None else None)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    model, history = train(model, train_set, val_set, tcfg)
    tau = calibrate_threshold(model, val_set)
    report = evaluate(test_set.signals, decode(model, test_set.measurements, tau))

    batch = collect_jacobians(model, test_set.measurements, cfg.T)
    est = solve_relaxed(batch)
    recovered = binarize_kmeans(est)
    error = structural_error(recovered, test_set.pooling)
    # noiseless inputs are logged for comparison only
    clean_est = solve_relaxed(collect_jacobians(model, test_set.noiseless_measurements(), cfg.T,
                                                source="noiseless test split"))
    clean_error = structural_error(binarize_kmeans(clean_est), test_set.pooling)
    elapsed = time.perf_counter() - started

    result = RunResult(seed, report.precision, report.recall, report.f1, report.success_rate,
                       report.mse, error, clean_error, tau, history.epochs_run,
                       history.best_epoch, est.ridge_applied, est.condition, elapsed)
    logger.info("seed %d: F1 %.4f SR %.4f error %.3f%% (%d epochs, %.0fs)",
                seed, result.f1, result.success_rate, error, history.epochs_run, elapsed)
    if out_dir is not None:
        run_dir = os.path.join(out_dir, f"{cfg.config_hash()}-seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        save_checkpoint(os.path.join(run_dir, "model.json"), model, threshold=tau,
                        train_config=tcfg.as_dict(), gen_config=gen.as_dict())
        history.to_csv(os.path.join(run_dir, "history.csv"))
        write_matrix_csv(est.values, os.path.join(run_dir, "A_relaxed.csv"), fmt="%.17g")
        write_matrix_csv(recovered.values, os.path.join(run_dir, "A_hat.csv"))
        write_matrix_csv(test_set.pooling, os.path.join(run_dir, "A_true.csv"))
        summary = {"T": cfg.T, "ridge_applied": est.ridge_applied, "ridge": est.ridge,
                   "condition": est.condition, "mismatch_percent": error,
                   "centroids": list(recovered.centroids)}
        with open(os.path.join(run_dir, "verify.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return result


def run_single(cfg, out_dir=None):
    """Average the full pipeline over ``cfg.seeds``."""
    _require(cfg)
    runs = [run_seed(cfg, seed, out_dir) for seed in cfg.seeds]
    return ResultRow(cfg, runs)


def run_sweep(cfg, axis, values, out_dir=None):
    """One :func:`run_single` per value of ``axis``, in ascending order."""
    if not values:
        raise InvalidArgumentError("sweep values must be non-empty")
    base = dataclasses.replace(cfg, sweep_axis=axis, sweep_values=tuple(sorted(values)))
    rows = []
    for value in base.sweep_values:
        point = base.at(axis, value)
        logger.info("%s = %s", axis, value)
        row = run_single(point, out_dir)
        row.sweep_axis, row.sweep_value = axis, value
        rows.append(row)
    return rows


def run_sweep_measurements(cfg, values=DEFAULT_M_GRID, out_dir=None):
    return run_sweep(cfg, "M", values, out_dir)


def run_sweep_noise(cfg, values=DEFAULT_NOISE_GRID, out_dir=None):
    return run_sweep(cfg, "noise_ratio", values, out_dir)


def run_complexity_study(cfg, levels=tuple(COMPLEXITY_LEVELS), out_dir=None):
    """Table of per-level means, one row per complexity level."""
    return run_sweep(dataclasses.replace(cfg, hidden=None), "level", levels, out_dir)


# -- output ------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return " ".join(str(v) for v in value)
    return "" if value is None else str(value)


def result_record(row):
    cfg = row.config
    rec = {
        "method": cfg.method, "sweep_axis": row.sweep_axis, "sweep_value": row.sweep_value,
        "N": cfg.N, "M": cfg.M, "K": float(cfg.K), "S": float(cfg.S), "D": cfg.D,
        "level": cfg.level if cfg.hidden is None else None, "hidden": cfg.hidden_layers,
        "n_train": cfg.sizes[0], "n_val": cfg.sizes[1], "n_test": cfg.sizes[2], "T": cfg.T,
        "seeds": cfg.seeds, "config_hash": cfg.config_hash(),
    }
    rec.update(row.means)
    return rec


def write_results_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            rec = result_record(row)
            writer.writerow([_fmt(rec[c]) for c in RESULT_COLUMNS])


def write_runs_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_COLUMNS)
        for row in rows:
            for run in row.runs:
                rec = dataclasses.asdict(run)
                rec.update(method=row.config.method, sweep_axis=row.sweep_axis,
                           sweep_value=row.sweep_value, config_hash=row.config.config_hash())
                writer.writerow([_fmt(rec[c]) for c in RUN_COLUMNS])


def read_results_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_sweep(records, path, axis=None):
    """Line plots of each measure against the sweep axis, saved as SVG.

    ``records`` are dicts as produced by :func:`result_record` or read back
    by :func:`read_results_csv`; rows are grouped into one line per method.
    Returns the matplotlib figure.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "qgtlab"
    axis = axis or records[0]["sweep_axis"]
    fig, axes = plt.subplots(1, len(PLOT_MEASURES), figsize=(4 * len(PLOT_MEASURES), 3.4))
    methods = sorted({r["method"] for r in records})
    for ax, measure in zip(axes, PLOT_MEASURES):
        lows, highs = [], []
        for method in methods:
            pts = sorted((float(r["sweep_value"]), float(r[measure]))
                         for r in records if r["method"] == method)
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=method)
            lows.append(min(ys))
            highs.append(max(ys))
        lo, hi = min(lows), max(highs)
        pad = 0.05 * (hi - lo) if hi > lo else max(0.05 * abs(hi), 0.01)
        ax.set_ylim(lo - pad, hi + pad)
        ax.set_xlabel({"M": "M", "noise_ratio": "S/N", "level": "level"}.get(axis, axis))
        ax.set_title(measure.replace("_", " "))
        ax.grid(alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return fig


def emit_outputs(rows, out_dir, name="results"):
    """Write result/run CSVs, timings, a manifest and (for sweeps) an SVG plot.

    Returns a dict of the written paths.
    """
    if not rows:
        raise InvalidArgumentError("no result rows to emit")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"cannot create output directory {out_dir}: {exc}") from exc
    paths = {"results": os.path.join(out_dir, f"{name}.csv"),
             "runs": os.path.join(out_dir, f"{name}_runs.csv"),
             "timings": os.path.join(out_dir, f"{name}_timings.csv"),
             "manifest": os.path.join(out_dir, f"{name}_manifest.json")}
    write_results_csv(rows, paths["results"])
    write_runs_csv(rows, paths["runs"])
    with open(paths["timings"], "w") as fh:
        fh.write("config_hash,seed,wall_seconds\n")
        for row in rows:
            for run in row.runs:
                fh.write(f"{row.config.config_hash()},{run.seed},{run.wall_seconds:.3f}\n")
    manifest = [{"sweep_axis": row.sweep_axis, "sweep_value": row.sweep_value,
                 "config_hash": row.config.config_hash(), "config": row.config.to_dict()}
                for row in rows]
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    if rows[0].sweep_axis is not None and len(rows) > 1:
        paths["plot"] = os.path.join(out_dir, f"{name}.svg")
        plot_sweep([result_record(r) for r in rows], paths["plot"])
    return paths


def output_root(default="qgt-output"):
    return os.environ.get(OUTPUT_ROOT_ENV, default)
