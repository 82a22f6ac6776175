"""Support-recovery metrics, computed per test vector and then averaged.

Degenerate cases: precision is 0 when nothing is predicted but something was
missed, recall is 0 when nothing is defective but something was predicted,
and an empty truth matched by an empty prediction scores 1 on P, R and F1.
"""

from dataclasses import astuple, dataclass, fields

import numpy as np

from ._validation import check_binary
from .exceptions import InvalidArgumentError

MEASURES = ("precision", "recall", "f1", "success", "mse")


@dataclass(frozen=True)
class SampleMetrics:
    precision: float
    recall: float
    f1: float
    success: float
    mse: float


@dataclass(frozen=True)
class MetricsReport:
    samples: tuple
    precision: float
    recall: float
    f1: float
    success_rate: float
    mse: float

    @property
    def count(self):
        return len(self.samples)

    def means(self):
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "success_rate": self.success_rate, "mse": self.mse}


def _ratio(num, den):
    return num / den if den else 0.0


def sample_metrics(truth, pred):
    truth = check_binary(truth, "truth").astype(bool)
    pred = check_binary(pred, "pred").astype(bool)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise InvalidArgumentError("truth and pred must be 1-D vectors of equal length")
    tp = int(np.count_nonzero(truth & pred))
    fp = int(np.count_nonzero(~truth & pred))
    fn = int(np.count_nonzero(truth & ~pred))
    if tp + fp + fn == 0:
        p = r = f1 = 1.0
    else:
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        f1 = _ratio(2 * p * r, p + r)
    mse = (fp + fn) / truth.size
    return SampleMetrics(p, r, f1, float(fp + fn == 0), mse)


def batch_metrics(truth, pred):
    """Vectorized per-sample metrics for ``(n, N)`` arrays.

    Returns a dict of length-``n`` arrays keyed by :data:`MEASURES`.
    """
    truth = check_binary(truth, "truth").astype(bool)
    pred = check_binary(pred, "pred").astype(bool)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise InvalidArgumentError("truth and pred must be 2-D arrays of equal shape")
    tp = np.count_nonzero(truth & pred, axis=1)
    fp = np.count_nonzero(~truth & pred, axis=1)
    fn = np.count_nonzero(truth & ~pred, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        r = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        f1 = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)
    empty = tp + fp + fn == 0
    p, r, f1 = (np.where(empty, 1.0, a) for a in (p, r, f1))
    return {"precision": p, "recall": r, "f1": f1,
            "success": (fp + fn == 0).astype(float), "mse": (fp + fn) / truth.shape[1]}


def aggregate(samples):
    samples = tuple(samples)
    if not samples:
        raise InvalidArgumentError("cannot aggregate an empty list of samples")
    table = np.array([astuple(s) for s in samples], dtype=np.float64)
    means = table.mean(axis=0)
    return MetricsReport(samples, *map(float, means))


def evaluate(truth, pred):
    """Per-sample metrics for a batch, aggregated into a report."""
    cols = batch_metrics(truth, pred)
    samples = tuple(SampleMetrics(*map(float, row))
                    for row in zip(*(cols[f.name] for f in fields(SampleMetrics))))
    return aggregate(samples)
