"""Generative model for noisy quantitative group testing.

Items ``j = 0..N-1`` are defective independently with probability ``K/N``.
Each of ``M`` pools reports the number of defectives it contains, corrupted
by sparse integer noise: with probability ``S/N`` a pool's count is shifted
by a value drawn uniformly from ``{-D, ..., D}`` (zero included).

Randomness layout
-----------------
Everything is derived from a single integer ``seed`` through
:class:`numpy.random.SeedSequence` spawn keys:

* ``(0,)`` -- the pooling matrix;
* ``(split, block)`` -- samples ``block*BLOCK_SIZE ...`` of a split, where
  ``split`` is 1/2/3 for train/val/test.

Each sample consumes one row of ``N + 2*M`` uniforms from its block stream,
so a dataset of ``n`` samples is a prefix of any larger dataset with the same
seed, and resizing one split never touches another.
"""

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_rng, check_binary, check_count, check_real
from .exceptions import InvalidArgumentError

SPLITS = ("train", "val", "test")
BLOCK_SIZE = 1024
MAGIC = "QGTDATA"
FORMAT_VERSION = "v1"

_POOLING_STREAM = 0
_SPLIT_STREAM = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the generative model plus the seed that fixes a draw."""

    N: int
    M: int
    K: float
    S: float
    D: int
    seed: int = 0

    def __post_init__(self):
        check_count(self.N, "N")
        check_count(self.M, "M")
        check_real(self.K, "K", 0, self.N)
        check_real(self.S, "S", 0, self.N)
        check_count(self.D, "D", minimum=0)
        check_count(self.seed, "seed", minimum=0)

    @property
    def defect_prob(self):
        return self.K / self.N

    @property
    def noise_prob(self):
        return self.S / self.N

    def as_dict(self):
        return {"N": self.N, "M": self.M, "K": float(self.K), "S": float(self.S),
                "D": self.D, "seed": self.seed}


def gen_pooling_matrix(M, N, rng):
    """Draw an ``M x N`` Bernoulli(1/2) pooling design as ``int8``."""
    check_count(M, "M")
    check_count(N, "N")
    rng = as_rng(rng)
    return (rng.random((M, N)) < 0.5).astype(np.int8)


def _signal_from_uniform(u, K, N):
    return (u < K / N).astype(np.int8)


def _noise_from_uniform(u_active, u_value, S, N, D):
    active = u_active < S / N
    values = np.floor(u_value * (2 * D + 1)).astype(np.int64) - D
    return np.where(active, values, 0)


def gen_signal(N, K, rng, size=None):
    """Draw a defect vector with i.i.d. Bernoulli(K/N) entries.

    With ``size`` given, returns a ``(size, N)`` batch instead.
    """
    check_count(N, "N")
    K = check_real(K, "K")
    if K < 0 or K > N:
        raise InvalidArgumentError(f"K must lie in [0, N={N}], got {K}")
    rng = as_rng(rng)
    shape = (N,) if size is None else (check_count(size, "size", 0), N)
    return _signal_from_uniform(rng.random(shape), K, N)


def gen_noise(M, S, N, D, rng, size=None):
    """Draw sparse bounded integer noise of length ``M``.

    Each entry is active with probability ``S/N``; active entries are
    uniform on ``{-D, ..., D}``, so some active draws are zero.
    """
    check_count(M, "M")
    check_count(N, "N")
    S = check_real(S, "S")
    if S < 0 or S > N:
        raise InvalidArgumentError(f"S must lie in [0, N={N}], got {S}")
    D = check_count(D, "D", minimum=0)
    rng = as_rng(rng)
    shape = (M,) if size is None else (check_count(size, "size", 0), M)
    u = rng.random((2,) + shape)
    return _noise_from_uniform(u[0], u[1], S, N, D)


def measure(A, x, eta):
    """Pooled counts ``y = A x + eta`` in exact integer arithmetic.

    ``x`` and ``eta`` may be single vectors or row-stacked batches.
    """
    A = np.asarray(A)
    x = np.asarray(x)
    eta = np.asarray(eta)
    if A.ndim != 2:
        raise InvalidArgumentError(f"A must be 2-D, got shape {A.shape}")
    M, N = A.shape
    if x.shape[-1:] != (N,):
        raise InvalidArgumentError(f"x has shape {x.shape}, expected last dim {N}")
    if eta.shape[-1:] != (M,) or eta.shape[:-1] != x.shape[:-1]:
        raise InvalidArgumentError(
            f"eta has shape {eta.shape}, expected {x.shape[:-1] + (M,)}")
    return x.astype(np.int64) @ A.T.astype(np.int64) + eta.astype(np.int64)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Measurement/signal pairs sharing one pooling design."""

    pooling: np.ndarray
    measurements: np.ndarray
    signals: np.ndarray
    split: str
    gen_config: GenConfig
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}, got {self.split!r}")
        M, N = self.pooling.shape
        if self.measurements.shape != (len(self.signals), M) or self.signals.shape[1:] != (N,):
            raise InvalidArgumentError("measurement/signal shapes disagree with the pooling matrix")
        for arr in (self.pooling, self.measurements, self.signals):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.signals)

    def __iter__(self):
        return iter(zip(self.measurements, self.signals))

    @property
    def pairs(self):
        return list(self)

    def noiseless_measurements(self):
        return measure(self.pooling, self.signals, np.zeros_like(self.measurements))


def pooling_for(config):
    """The pooling matrix fixed by ``config.seed``."""
    seq = np.random.SeedSequence(config.seed, spawn_key=(_POOLING_STREAM,))
    return gen_pooling_matrix(config.M, config.N, np.random.default_rng(seq))


def _generate_split(config, A, split, n):
    N, M = config.N, config.M
    xs = np.empty((n, N), dtype=np.int8)
    etas = np.empty((n, M), dtype=np.int64)
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, n)
        seq = np.random.SeedSequence(config.seed, spawn_key=(_SPLIT_STREAM[split], block))
        u = np.random.default_rng(seq).random((stop - start, N + 2 * M))
        xs[start:stop] = _signal_from_uniform(u[:, :N], config.K, N)
        etas[start:stop] = _noise_from_uniform(
            u[:, N:N + M], u[:, N + M:], config.S, N, config.D)
    ys = measure(A, xs, etas)
    return Dataset(A, ys, xs, split, config)


def make_dataset(config, sizes):
    """Generate train/val/test splits over one shared pooling matrix.

    Parameters
    ----------
    config : GenConfig
    sizes : tuple of int
        ``(n_train, n_val, n_test)``; zeros give empty splits.

    Returns
    -------
    tuple of Dataset
    """
    if not isinstance(config, GenConfig):
        raise InvalidArgumentError("config must be a GenConfig")
    if len(sizes) != 3:
        raise InvalidArgumentError(f"sizes must have three entries, got {sizes!r}")
    sizes = [check_count(s, f"sizes[{i}]", minimum=0) for i, s in enumerate(sizes)]
    A = pooling_for(config)
    A.setflags(write=False)
    return tuple(_generate_split(config, A, split, n) for split, n in zip(SPLITS, sizes))


# -- persistence -------------------------------------------------------------

_HEADER_RE = re.compile(
    r"^QGTDATA v1 N=(\d+) M=(\d+) K=(\S+) S=(\S+) D=(\d+) seed=(\d+) count=(\d+)$")


def _record_dtype(N, M):
    return np.dtype([("x", "u1", (N,)), ("y", "<i4", (M,))])


def write_dataset(dataset, path):
    """Write the columnar binary format: one text header line, then records."""
    cfg = dataset.gen_config
    y = dataset.measurements
    if y.size and (y.min() < np.iinfo(np.int32).min or y.max() > np.iinfo(np.int32).max):
        raise InvalidArgumentError("measurements do not fit in int32")
    header = (f"{MAGIC} {FORMAT_VERSION} N={cfg.N} M={cfg.M} K={float(cfg.K)!r} "
              f"S={float(cfg.S)!r} D={cfg.D} seed={cfg.seed} count={len(dataset)}\n")
    records = np.empty(len(dataset), dtype=_record_dtype(cfg.N, cfg.M))
    records["x"] = dataset.signals
    records["y"] = y
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(records.tobytes())


def read_dataset(path, split="test"):
    """Read a file written by :func:`write_dataset`.

    The pooling matrix is not stored; it is regenerated from the header seed.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").rstrip("\n")
        payload = fh.read()
    match = _HEADER_RE.match(header)
    if match is None:
        raise InvalidArgumentError(f"{path}: not a {MAGIC} {FORMAT_VERSION} file")
    N, M = int(match[1]), int(match[2])
    config = GenConfig(N, M, float(match[3]), float(match[4]), int(match[5]), int(match[6]))
    count = int(match[7])
    dtype = _record_dtype(N, M)
    if len(payload) != count * dtype.itemsize:
        raise InvalidArgumentError(f"{path}: expected {count} records of {dtype.itemsize} bytes")
    records = np.frombuffer(payload, dtype=dtype)
    signals = check_binary(records["x"].astype(np.int8), "signals")
    return Dataset(pooling_for(config), records["y"].astype(np.int64), signals, split, config)


def export_csv(dataset, path):
    """One row per sample: ``y_0..y_{M-1}, x_0..x_{N-1}``."""
    M, N = dataset.pooling.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y_{i}" for i in range(M)] + [f"x_{j}" for j in range(N)])
        for y, x in dataset:
            writer.writerow([int(v) for v in y] + [int(v) for v in x])


def write_matrix_csv(matrix, path, fmt="%d"):
    np.savetxt(path, np.asarray(matrix), fmt=fmt, delimiter=",")
