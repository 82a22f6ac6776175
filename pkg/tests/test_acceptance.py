"""End-to-end acceptance checks.

Profiles are picked with ``QGT_ACCEPTANCE_PROFILE``:

``smoke`` (default)
    Dataset sizes divided by four, seeds from ``QGT_ACCEPTANCE_SEEDS``
    (default ``0``).  Runs in about 70 min on a single core.
``full``
    Full dataset sizes and five seeds.  Expect many hours on one core.

Every experiment is also written under ``$QGT_OUTPUT_ROOT/acceptance-<profile>``.
"""

import dataclasses
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from qgtlab import harness

pytestmark = pytest.mark.acceptance

PROFILE = os.environ.get("QGT_ACCEPTANCE_PROFILE", "smoke")
if PROFILE not in ("smoke", "full"):
    raise ValueError(f"QGT_ACCEPTANCE_PROFILE must be smoke or full, got {PROFILE!r}")
SEEDS = tuple(int(s) for s in os.environ.get(
    "QGT_ACCEPTANCE_SEEDS", "0" if PROFILE == "smoke" else "0,1,2,3,4").split(","))
SMOKE = PROFILE == "smoke"

BASE = harness.ExperimentConfig(N=100, M=35, K=6.0, S=6.0, D=1, level=5, T=1000, seeds=SEEDS)
if SMOKE:
    BASE = BASE.smoke()

NOISE_TOLERANCE = 0.02
TREND_MEASURES = ("precision", "recall", "f1", "success_rate")
PROPERTY_MODULES = ("test_core.py", "test_nn.py", "test_trainer.py", "test_verifiability.py",
                    "test_metrics.py", "test_determinism.py")
TESTS_DIR = Path(__file__).parent


class Runs:
    """Runs each distinct config once and writes its outputs."""

    def __init__(self):
        self.rows = {}
        self.out = Path(harness.output_root()) / f"acceptance-{PROFILE}"

    def get(self, cfg, name):
        if cfg not in self.rows:
            started = time.perf_counter()
            row = harness.run_single(cfg, out_dir=self.out / "runs")
            row.wall_seconds = time.perf_counter() - started
            harness.emit_outputs([row], self.out, name)
            self.rows[cfg] = row
        return self.rows[cfg]

    def sweep(self, axis, values, cfg, name):
        rows = []
        base = dataclasses.replace(cfg, sweep_axis=axis, sweep_values=tuple(values))
        for value in values:
            row = self.get(base.at(axis, value), f"{name}-{value}")
            row.sweep_axis, row.sweep_value = axis, value
            rows.append(row)
        harness.emit_outputs(rows, self.out, name)
        return rows


@pytest.fixture(scope="module")
def runs():
    return Runs()


def report(log, label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label} [{PROFILE}, seeds={list(SEEDS)}]: {detail}"
    log.append(line)
    print(line)
    return ok


def fmt(row):
    return (f"F1 {row.f1:.4f}, SR {row.success_rate:.4f}, P {row.precision:.4f}, "
            f"R {row.recall:.4f}, MSE {row.mse:.5f}, error {row.structural_error:.3f}%")


def test_reference_configuration_quality(runs, acceptance_log):
    row = runs.get(BASE, "level5")
    per_seed = row.wall_seconds / len(SEEDS)
    if SMOKE:
        checks = {"F1 >= 0.85": row.f1 >= 0.85,
                  "error <= 5%": row.structural_error <= 5.0,
                  "<= 15 min per seed": per_seed <= 900}
    else:
        checks = {"F1 >= 0.90": row.f1 >= 0.90,
                  "SR >= 0.50": row.success_rate >= 0.50,
                  "error <= 2%": row.structural_error <= 2.0}
    failed = [k for k, ok in checks.items() if not ok]
    detail = f"{fmt(row)}, {per_seed:.0f}s/seed" + (f"; failed {failed}" if failed else "")
    assert report(acceptance_log, "level-5 decoder quality", not failed, detail), detail


def test_complexity_trend(runs, acceptance_log):
    l1 = runs.get(BASE.at("level", 1), "level1")
    l4 = runs.get(BASE.at("level", 4), "level4")
    e1, e4 = l1.structural_error, l4.structural_error
    ok = e1 >= 10 * e4 and e1 >= 20.0
    detail = f"level-1 error {e1:.3f}%, level-4 error {e4:.3f}% (need >= 20% and >= 10x)"
    assert report(acceptance_log, "complexity trend", ok, detail), detail


def test_measurement_sweep_trend(runs, acceptance_log):
    cfg = dataclasses.replace(BASE, S=10.0)
    r20, r30, r40 = runs.sweep("M", (20, 30, 40), cfg, "sweep_m")
    gain = r40.f1 - r20.f1
    srs = [r20.success_rate, r30.success_rate, r40.success_rate]
    drops = [a - b for a, b in zip(srs, srs[1:]) if b < a]
    ok = gain >= 0.05 and len(drops) <= 1 and all(d <= NOISE_TOLERANCE for d in drops)
    detail = (f"F1 {r20.f1:.4f} -> {r30.f1:.4f} -> {r40.f1:.4f} (gain {gain:.4f}), "
              f"SR {srs[0]:.4f} -> {srs[1]:.4f} -> {srs[2]:.4f}")
    assert report(acceptance_log, "measurement sweep trend", ok, detail), detail


def test_noise_sweep_trend(runs, acceptance_log):
    low, high = runs.sweep("noise_ratio", (0.04, 0.20), BASE, "sweep_s")
    excess = {m: getattr(high, m) - getattr(low, m) for m in TREND_MEASURES}
    # lower is better for mse: an improvement under heavier noise is a drop
    excess["mse"] = low.mse - high.mse
    bad = [m for m, e in excess.items() if e > NOISE_TOLERANCE]
    ok = low.f1 >= high.f1 and not bad
    detail = (f"S/N 0.04: {fmt(low)}; S/N 0.20: {fmt(high)}"
              + (f"; beyond tolerance {bad}" if bad else ""))
    assert report(acceptance_log, "noise sweep trend", ok, detail), detail


def test_property_suite_within_budget(acceptance_log):
    started = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
         *(str(TESTS_DIR / m) for m in PROPERTY_MODULES)],
        capture_output=True, text=True, cwd=TESTS_DIR.parent)
    elapsed = time.perf_counter() - started
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-300:]
    ok = proc.returncode == 0 and elapsed < 300
    detail = f"{summary} ({elapsed:.0f}s, budget 300s)"
    assert report(acceptance_log, "property suite", ok, detail), proc.stdout[-3000:]
