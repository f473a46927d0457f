"""scikit-learn style wrappers around the simulator-to-policy pipeline.

``DeepHedger`` exposes the trainable policy as a fit/predict estimator and
``PathNormalizer`` exposes feature standardization as a fit/transform step,
so both compose with sklearn pipelines, ``clone``, and grid search.  Inputs
may be ``market.PathBatch`` objects or plain arrays of shape
[n_paths, n_steps + 1, 2] stacking (price, variance) trajectories.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import market, objective, policy
from .errors import ParameterError
from .training import TrainConfig
from .training import train as run_training


@dataclass
class _ArrayPaths:
    """Duck-typed stand-in for a PathBatch built from raw arrays."""

    prices: np.ndarray
    variances: np.ndarray

    @property
    def n_paths(self):
        return self.prices.shape[0]

    @property
    def n_steps(self):
        return self.prices.shape[1] - 1


def _coerce_paths(X):
    """Validate and unpack estimator input into a paths container."""
    if isinstance(X, (market.PathBatch, _ArrayPaths)):
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != 2:
        raise ParameterError(
            f"expected a PathBatch or array [n_paths, n_steps + 1, 2], got shape {X.shape}"
        )
    if X.shape[1] < 2:
        raise ParameterError("need at least 2 time columns (one step)")
    prices = np.ascontiguousarray(X[:, :, 0])
    variances = np.ascontiguousarray(X[:, :, 1])
    if not np.isfinite(X).all():
        raise ParameterError("paths contain non-finite entries")
    if not (prices > 0).all():
        raise ParameterError("all prices must be > 0")
    if not (variances >= 0).all():
        raise ParameterError("all variances must be >= 0")
    return _ArrayPaths(prices, variances)


class PathNormalizer(TransformerMixin, BaseEstimator):
    """Standardize price/variance decision-point features to zero mean, unit std.

    Statistics are frozen at fit time (training data only), so transforming
    held-out paths uses the training scale.
    """

    def fit(self, X, y=None):
        batch = _coerce_paths(X)
        self.stats_ = market.compute_norm_stats(batch)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        if not hasattr(self, "stats_"):
            raise NotFittedError("PathNormalizer is not fitted")
        return market.normalize(_coerce_paths(X), self.stats_)


class DeepHedger(BaseEstimator):
    """LSTM hedging policy trained on simulated paths.

    ``fit`` holds out the trailing ``validation_fraction`` of paths for the
    per-epoch validation curve, standardizes features with training-set
    statistics, and trains with either plain Adam or the hybrid optimizer
    that preconditions the output layer with Kronecker-factored curvature.
    ``predict`` returns hedge ratios in (-1, 1), one per decision step.
    """

    def __init__(self, hidden_dim=32, n_lstm_layers=1, epochs=100, batch_size=32,
                 optimizer="adam", learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, weight_decay=1e-4, kfac_lr=0.1, kfac_damping=1e-2,
                 kfac_ema_decay=0.95, cost_weight=1.0, strike=100.0,
                 option_side="long", cost_rate=0.001, validation_fraction=1.0 / 6.0,
                 seed=7):
        self.hidden_dim = hidden_dim
        self.n_lstm_layers = n_lstm_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.kfac_lr = kfac_lr
        self.kfac_damping = kfac_damping
        self.kfac_ema_decay = kfac_ema_decay
        self.cost_weight = cost_weight
        self.strike = strike
        self.option_side = option_side
        self.cost_rate = cost_rate
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _option(self):
        return objective.OptionSpec(strike=self.strike, side=self.option_side)

    def _cost_model(self):
        return objective.CostModel(rate=self.cost_rate)

    def fit(self, X, y=None):
        batch = _coerce_paths(X)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ParameterError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        n_train = int(batch.n_paths * (1.0 - self.validation_fraction))
        if n_train < self.batch_size or batch.n_paths - n_train < 2:
            raise ParameterError(
                f"{batch.n_paths} paths cannot support batch_size {self.batch_size} "
                f"plus a validation split of {self.validation_fraction}"
            )
        train_paths = _ArrayPaths(batch.prices[:n_train], batch.variances[:n_train])
        val_paths = _ArrayPaths(batch.prices[n_train:], batch.variances[n_train:])
        arch = policy.ArchConfig(input_dim=2, hidden_dim=self.hidden_dim,
                                 n_lstm_layers=self.n_lstm_layers, output_dim=1)
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, optimizer=self.optimizer,
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            epsilon=self.epsilon, weight_decay=self.weight_decay,
            kfac_lr=self.kfac_lr, kfac_damping=self.kfac_damping,
            kfac_ema_decay=self.kfac_ema_decay, cost_weight=self.cost_weight,
            seed=self.seed,
        )
        result = run_training(train_paths, val_paths, arch, cfg,
                              self._option(), self._cost_model())
        self.policy_ = result.params
        self.norm_stats_ = result.norm_stats
        self.curve_ = result.curve
        self.n_features_in_ = 2
        return self

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError("DeepHedger is not fitted")

    def predict(self, X):
        """Hedge ratios [n_paths, n_steps] for each decision step."""
        self._check_fitted()
        batch = _coerce_paths(X)
        features = market.normalize(batch, self.norm_stats_)
        hedges = np.empty((batch.n_paths, batch.n_steps))
        chunk = 256
        for lo in range(0, batch.n_paths, chunk):
            hi = min(lo + chunk, batch.n_paths)
            hedges[lo:hi], _ = policy.forward(self.policy_, features[lo:hi],
                                              want_cache=False)
        return hedges

    def score(self, X, y=None):
        """Negative composite loss (higher is better, sklearn convention)."""
        self._check_fitted()
        batch = _coerce_paths(X)
        hedges = self.predict(batch)
        records = objective.compute_pnl(batch.prices, hedges, self._option(),
                                        self._cost_model())
        return -float(records.pnl.var(ddof=1) + self.cost_weight * records.cost.mean())
