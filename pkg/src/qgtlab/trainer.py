"""Balanced-MSE training, threshold calibration and binary decoding."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_binary, check_count, check_real
from .exceptions import InvalidArgumentError, TrainingDivergedError
from .nn import AdamState, adam_step

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 11


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    loss: str = "balanced_mse"

    def __post_init__(self):
        check_count(self.batch_size, "batch_size", minimum=2)
        check_real(self.learning_rate, "learning_rate", low=0)
        check_count(self.max_epochs, "max_epochs")
        check_count(self.patience, "patience")
        check_count(self.seed, "seed", minimum=0)
        if self.loss != "balanced_mse":
            raise InvalidArgumentError(f"unsupported loss {self.loss!r}")

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs_run(self):
        return len(self.val_loss)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for epoch, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                fh.write(f"{epoch},{tl!r},{vl!r}\n")


def balanced_mse(targets, preds, reduction="sum"):
    """Class-balanced squared error and its gradient with respect to ``preds``.

    For each sample the squared errors on defective and non-defective
    coordinates are averaged separately, the two averages are added and
    halved.  A class absent from a sample contributes nothing.  ``reduction``
    is ``"sum"`` (sum over samples) or ``"mean"``.

    Returns
    -------
    loss : float
    grad : ndarray, same shape as ``preds``
    """
    targets = check_binary(targets, "targets")
    preds = np.asarray(preds, dtype=np.float64)
    if targets.shape != preds.shape:
        raise InvalidArgumentError(f"shape mismatch: targets {targets.shape}, preds {preds.shape}")
    single = preds.ndim == 1
    if single:
        targets, preds = targets[None], preds[None]
    ones = targets == 1
    n_ones = ones.sum(axis=1, keepdims=True)
    n_zeros = ones.shape[1] - n_ones
    with np.errstate(divide="ignore"):
        w_one = np.where(n_ones > 0, 1.0 / n_ones, 0.0)
        w_zero = np.where(n_zeros > 0, 1.0 / n_zeros, 0.0)
    weights = np.where(ones, w_one, w_zero)
    err = preds - targets
    loss = 0.5 * float(np.sum(weights * err * err))
    grad = weights * err
    if reduction == "mean":
        loss /= len(preds)
        grad /= len(preds)
    elif reduction != "sum":
        raise InvalidArgumentError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    return loss, (grad[0] if single else grad)


def train(model, train_set, val_set, cfg=TrainConfig()):
    """Fit ``model`` with Adam on shuffled mini-batches and early stopping.

    ``train_set`` and ``val_set`` are :class:`~qgtlab.core.Dataset` objects
    or ``(measurements, signals)`` array pairs.

    The validation loss (per-sample balanced MSE, eval mode) is checked after
    every epoch; training stops once it has not improved for ``cfg.patience``
    epochs.  The model is left in eval mode holding its best-epoch weights.
    """
    Y, X = _as_arrays(train_set, model)
    Yv, Xv = _as_arrays(val_set, model)
    X = X.astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(_SHUFFLE_STREAM,)))
    opt = AdamState([model.flat_params], lr=cfg.learning_rate)
    history = TrainHistory()
    best_loss, best_state, wait = np.inf, model.copy_state(), 0
    n = len(Y)

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch statistics need two samples
            out, cache = model.forward(Y[idx], rng=rng)
            loss, grad = balanced_mse(X[idx], out, reduction="mean")
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            grads = model.backward(cache, grad)
            adam_step([model.flat_params], [np.concatenate([g.ravel() for g in grads.values()])], opt)
            model.mark_updated()
            total += loss * len(idx)
            seen += len(idx)
        model.eval()
        val_loss = balanced_mse(Xv, model.predict(Yv), reduction="mean")[0]
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(total / max(seen, 1))
        history.val_loss.append(val_loss)
        logger.debug("epoch %d train %.6f val %.6f", epoch, history.train_loss[-1], val_loss)
        if val_loss < best_loss:
            best_loss, best_state, wait = val_loss, model.copy_state(), 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                break

    model.load_state(best_state)
    model.eval()
    logger.info("stopped after %d epochs, best epoch %d (val %.6f)",
                history.epochs_run, history.best_epoch, best_loss)
    return model, history


def _as_arrays(data, model):
    if isinstance(data, tuple):
        Y, X = data
    else:
        Y, X = data.measurements, data.signals
    Y = np.asarray(Y, dtype=np.float64)
    X = check_binary(X, "signals")
    if len(Y) == 0:
        raise InvalidArgumentError("train and validation splits must be non-empty")
    if Y.ndim != 2 or X.ndim != 2 or len(Y) != len(X):
        raise InvalidArgumentError("measurements and signals must be 2-D with matching rows")
    if (Y.shape[1], X.shape[1]) != (model.input_dim, model.output_dim):
        raise InvalidArgumentError(
            f"data is {Y.shape[1]}->{X.shape[1]} but the model maps "
            f"{model.input_dim}->{model.output_dim}")
    return Y, X


def success_intervals(preds, targets):
    """Per-sample interval ``(lo, hi]`` of thresholds that decode exactly."""
    preds = np.asarray(preds, dtype=np.float64)
    ones = np.asarray(targets) == 1
    lo = np.where(~ones, preds, -np.inf).max(axis=1)
    hi = np.where(ones, preds, np.inf).min(axis=1)
    return lo, hi


def best_threshold(preds, targets):
    """Smallest threshold maximizing exact-recovery rate over a batch.

    Candidates are the midpoints between consecutive distinct predictions,
    plus one value below the minimum and one above the maximum.  Returns
    ``(tau, success_rate)``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = check_binary(targets, "targets")
    if preds.shape != targets.shape or preds.ndim != 2 or len(preds) == 0:
        raise InvalidArgumentError("preds and targets must be equal, non-empty 2-D arrays")
    values = np.unique(preds)
    candidates = np.concatenate((
        [values[0] - 1.0], (values[:-1] + values[1:]) / 2, [values[-1] + 1.0]))
    lo, hi = success_intervals(preds, targets)
    feasible = lo < hi
    lo, hi = np.sort(lo[feasible]), np.sort(hi[feasible])
    # #{lo < tau <= hi} = #{lo < tau} - #{hi < tau} since hi < tau implies lo < tau
    hits = np.searchsorted(lo, candidates, side="left") - np.searchsorted(hi, candidates, side="left")
    best = int(np.argmax(hits))
    return float(candidates[best]), hits[best] / len(preds)


def calibrate_threshold(model, val_set):
    """Threshold that maximizes validation Success Rate on raw model outputs."""
    if len(val_set) == 0:
        raise InvalidArgumentError("validation split is empty")
    return best_threshold(model.predict(val_set.measurements), val_set.signals)[0]


def decode(model, y, tau):
    """Binary estimate: 1 where the model output is at least ``tau``."""
    y = np.asarray(y)
    out = model.predict(y[None] if y.ndim == 1 else y)
    bits = (out >= tau).astype(np.int8)
    return bits[0] if y.ndim == 1 else bits
