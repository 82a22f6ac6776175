"""Recovering the pooling design from a trained decoder's Jacobians.

If the decoder locally inverts ``y = A x``, its Jacobians ``B_i = dx/dy``
(each ``N x M``) should satisfy ``A B_i ~ I_M``.  The least-squares
estimate of ``A`` is therefore

    C* = argmin_C  sum_i || I_M - C B_i ||_F^2
       = (sum_i B_i^T) (sum_i B_i B_i^T)^{-1},

which is then binarized with one-dimensional two-means.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_count
from .exceptions import (DegenerateClusteringError, InvalidArgumentError, InvalidStateError,
                         SingularSystemError)

RIDGE_CONDITION = 1e12
RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class JacobianBatch:
    matrices: np.ndarray  # (T, N, M)
    source: str = ""

    def __post_init__(self):
        if self.matrices.ndim != 3 or len(self.matrices) == 0:
            raise InvalidArgumentError("a Jacobian batch needs shape (T, N, M) with T >= 1")

    def __len__(self):
        return len(self.matrices)


@dataclass(frozen=True, eq=False)
class RelaxedEstimate:
    values: np.ndarray  # (M, N)
    ridge_applied: bool = False
    ridge: float = 0.0
    condition: float = 1.0


@dataclass(frozen=True, eq=False)
class RecoveredPooling:
    values: np.ndarray  # (M, N) int8
    centroids: tuple
    iterations: int = 0


def collect_jacobians(model, test_inputs, T, source="test split"):
    """Jacobians of the eval-mode ``model`` at the first ``T`` inputs."""
    T = check_count(T, "T")
    test_inputs = np.asarray(test_inputs)
    if len(test_inputs) < T:
        raise InvalidArgumentError(f"need {T} test inputs, only {len(test_inputs)} available")
    if model.mode != "eval":
        raise InvalidStateError("collect_jacobians requires the model in eval mode")
    return JacobianBatch(model.jacobian(test_inputs[:T]), source)


def gram_terms(batch):
    """``(sum_i B_i^T, sum_i B_i B_i^T)`` accumulated in input order."""
    B = batch.matrices
    rhs = B.sum(axis=0).T
    gram = np.einsum("tnm,tkm->nk", B, B, optimize=True)
    return rhs, gram


def objective(C, batch):
    """``sum_i ||I - C B_i||_F^2``."""
    M = batch.matrices.shape[2]
    residual = np.eye(M) - np.matmul(C, batch.matrices)
    return float(np.sum(residual * residual))


def solve_relaxed(batch, ridge_condition=RIDGE_CONDITION):
    """Closed-form least-squares estimate of the pooling matrix.

    Solves ``C G = R`` with ``G = sum B_i B_i^T`` and ``R = sum B_i^T`` by a
    linear solve.  When ``G`` is ill conditioned (condition number above
    ``ridge_condition``) a ridge ``lam * I`` with
    ``lam = 1e-8 * trace(G) / N`` is added, and the returned estimate records
    that fact.
    """
    rhs, gram = gram_terms(batch)
    N = gram.shape[0]
    if not np.all(np.isfinite(gram)):
        raise SingularSystemError("Gram matrix has non-finite entries", condition=np.inf)
    condition = float(np.linalg.cond(gram))
    ridge = 0.0
    if not condition <= ridge_condition:
        ridge = RIDGE_SCALE * float(np.trace(gram)) / N
        if ridge <= 0:
            raise SingularSystemError(
                f"Gram matrix is singular (condition {condition:.3g}) and has zero trace",
                condition=condition)
        gram = gram + ridge * np.eye(N)
        regularized = float(np.linalg.cond(gram))
        if not regularized <= ridge_condition:
            raise SingularSystemError(
                f"Gram matrix remains singular after ridge (condition {regularized:.3g})",
                condition=regularized)
    # G is symmetric, so C G = R  <=>  G C^T = R^T
    C = np.linalg.solve(gram, rhs.T).T
    return RelaxedEstimate(C, ridge > 0, ridge, condition)


def two_means_1d(values, max_iter=1000):
    """Lloyd's algorithm on scalars, started from the extreme values.

    Returns ``(labels, (c_low, c_high), iterations)``; label 1 marks the
    cluster with the larger centroid.  If Lloyd stalls in a worse partition
    than the best single cut of the sorted values, that cut is used instead.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = v.min(), v.max()
    if not lo < hi:
        raise DegenerateClusteringError("two-means needs at least two distinct values")
    c0, c1 = lo, hi
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        new = (np.abs(v - c1) < np.abs(v - c0)).astype(np.int8)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        c0, c1 = v[labels == 0].mean(), v[labels == 1].mean()

    # guard against a local optimum: compare with the best contiguous cut
    sse = np.sum((v[labels == 0] - c0) ** 2) + np.sum((v[labels == 1] - c1) ** 2)
    cut, cut_sse = _best_cut(v)
    if cut_sse < sse * (1 - 1e-12):
        labels = (v > cut).astype(np.int8)
        c0, c1 = v[labels == 0].mean(), v[labels == 1].mean()
    return labels.reshape(np.shape(values)), (float(c0), float(c1)), it


def _best_cut(v):
    s = np.sort(v)
    distinct = np.flatnonzero(s[1:] > s[:-1])  # cut after position k
    n = len(s)
    csum = np.cumsum(s)
    csq = np.cumsum(s * s)
    k = distinct + 1
    left = csq[k - 1] - csum[k - 1] ** 2 / k
    right = (csq[-1] - csq[k - 1]) - (csum[-1] - csum[k - 1]) ** 2 / (n - k)
    best = int(np.argmin(left + right))
    return s[distinct[best]], float((left + right)[best])


def binarize_kmeans(est):
    """Binarize a relaxed estimate: larger-centroid cluster becomes 1."""
    values = est.values if isinstance(est, RelaxedEstimate) else np.asarray(est)
    labels, centroids, iterations = two_means_1d(values)
    return RecoveredPooling(labels.astype(np.int8), centroids, iterations)


def structural_error(recovered, truth):
    """Percentage of entries where the recovered design differs from ``truth``."""
    rec = recovered.values if isinstance(recovered, RecoveredPooling) else np.asarray(recovered)
    truth = np.asarray(truth)
    if rec.shape != truth.shape:
        raise InvalidArgumentError(f"shape mismatch: {rec.shape} vs {truth.shape}")
    return 100.0 * np.count_nonzero(rec != truth) / truth.size


def recover_pooling(model, test_inputs, T):
    """Jacobians -> relaxed estimate -> binary design, in one call."""
    batch = collect_jacobians(model, test_inputs, T)
    est = solve_relaxed(batch)
    return est, binarize_kmeans(est)
