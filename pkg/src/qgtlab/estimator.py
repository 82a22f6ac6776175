"""scikit-learn compatible front end for the QGT decoder."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidArgumentError
from .metrics import evaluate
from .nn import COMPLEXITY_LEVELS, DROPOUT_P, NEGATIVE_SLOPE, build_model, load_checkpoint, \
    save_checkpoint
from .trainer import TrainConfig, best_threshold, train
from .verifiability import binarize_kmeans, collect_jacobians, solve_relaxed


class QGTDecoder(BaseEstimator):
    """MLP decoder mapping pooled counts ``(n, M)`` to defect indicators ``(n, N)``.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden blocks; ``()`` gives a linear decoder.
    complexity_level : int or None
        One of the preset levels 1-7; overrides ``hidden_layer_sizes``.
    batch_size, learning_rate, max_epochs, patience
        Optimizer and early-stopping settings.
    validation_fraction : float
        Share of the training data held out for early stopping and threshold
        calibration when ``fit`` receives no explicit validation set.
    random_state : int
        Seeds weight initialization, shuffling and dropout.

    Attributes
    ----------
    model_ : MlpModel
    threshold_ : float
    history_ : TrainHistory
    validation_success_rate_ : float
    """

    def __init__(self, hidden_layer_sizes=(500, 500), complexity_level=None,
                 negative_slope=NEGATIVE_SLOPE, dropout=DROPOUT_P, batch_size=128,
                 learning_rate=1e-3, max_epochs=200, patience=10, validation_fraction=0.1,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.complexity_level = complexity_level
        self.negative_slope = negative_slope
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _hidden(self):
        if self.complexity_level is None:
            return tuple(self.hidden_layer_sizes)
        if self.complexity_level not in COMPLEXITY_LEVELS:
            raise InvalidArgumentError(f"complexity_level must be 1-7, got {self.complexity_level}")
        return COMPLEXITY_LEVELS[self.complexity_level]

    def _train_config(self):
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.random_state)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on measurements ``X`` and binary targets ``y``, then calibrate the threshold."""
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=None)
        if len(X) != len(y):
            raise InvalidArgumentError("X and y have different numbers of rows")
        if X_val is None:
            if not 0 < self.validation_fraction < 1:
                raise InvalidArgumentError("validation_fraction must lie in (0, 1)")
            rng = np.random.default_rng(self.random_state)
            order = rng.permutation(len(X))
            n_val = max(2, int(round(self.validation_fraction * len(X))))
            val_idx, tr_idx = order[:n_val], order[n_val:]
            X, X_val, y, y_val = X[tr_idx], X[val_idx], y[tr_idx], y[val_idx]
        else:
            X_val = check_array(X_val, dtype=np.float64)
            y_val = check_array(y_val, dtype=None)
        cfg = self._train_config()
        model = build_model(X.shape[1], y.shape[1], self._hidden(), self.random_state,
                            slope=self.negative_slope, dropout=self.dropout,
                            complexity_level=self.complexity_level)
        self.model_, self.history_ = train(model, (X, y), (X_val, y_val), cfg)
        self.threshold_, self.validation_success_rate_ = best_threshold(
            self.model_.predict(X_val), y_val)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        return self

    def decision_function(self, X):
        """Raw real-valued scores, one per item."""
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X, dtype=np.float64))

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold_).astype(np.int8)

    def score(self, X, y):
        """Fraction of rows decoded exactly (Success Rate)."""
        return evaluate(check_array(y, dtype=None), self.predict(X)).success_rate

    def jacobian(self, X):
        check_is_fitted(self, "model_")
        return self.model_.jacobian(check_array(X, dtype=np.float64))

    def recover_pooling(self, X, T=None):
        """Estimate the pooling design from Jacobians at the rows of ``X``.

        Returns ``(relaxed_estimate, recovered_pooling)``.
        """
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        batch = collect_jacobians(self.model_, X, len(X) if T is None else T)
        est = solve_relaxed(batch)
        return est, binarize_kmeans(est)

    def save(self, path, **extra):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, threshold=self.threshold_,
                        estimator_params=self.get_params(), **extra)

    @classmethod
    def load(cls, path):
        model, extra = load_checkpoint(path)
        params = extra.get("estimator_params", {})
        if "hidden_layer_sizes" in params:
            params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        est = cls(**params)
        est.model_ = model
        est.threshold_ = extra["threshold"]
        est.n_features_in_ = model.input_dim
        est.n_outputs_ = model.output_dim
        return est
