"""Neural decoding and structural verification for quantitative group testing."""

from .core import Dataset, GenConfig, gen_noise, gen_pooling_matrix, gen_signal, make_dataset, \
    measure
from .estimator import QGTDecoder
from .exceptions import (DegenerateClusteringError, InvalidArgumentError, InvalidStateError,
                         QGTError, SingularSystemError, TrainingDivergedError)
from .metrics import aggregate, evaluate, sample_metrics
from .nn import COMPLEXITY_LEVELS, MlpModel, build_level, build_model
from .trainer import TrainConfig, balanced_mse, calibrate_threshold, decode, train
from .verifiability import binarize_kmeans, collect_jacobians, solve_relaxed, structural_error

__version__ = "0.1.0"
