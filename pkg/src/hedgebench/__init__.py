"""hedgebench: a simulated-market deep-hedging benchmark.

Generates correlated stochastic-volatility paths, trains an LSTM hedging
policy with exact backpropagation through time, and compares a first-order
Adam baseline against a hybrid optimizer whose output layer follows a
Kronecker-factored curvature-preconditioned direction.
"""

from .errors import (
    ConfigError,
    DegenerateDataError,
    HedgebenchError,
    NumericError,
    ParameterError,
    ParseError,
)
from .estimator import DeepHedger, PathNormalizer
from .market import (
    HestonParams,
    NormStats,
    PathBatch,
    compute_norm_stats,
    normalize,
    read_paths,
    simulate_paths,
    split,
    write_paths,
)
from .objective import CostModel, OptionSpec, PnLRecord, compute_pnl, loss_and_grad
from .policy import ArchConfig, PolicyParams, backward, forward, init_policy
from .stats import (
    MetricsReport,
    TTestResult,
    compare,
    evaluate,
    pearson_correlation,
    welch_t_test,
)
from .training import TrainConfig, TrainResult, convergence_epoch, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ConfigError",
    "CostModel",
    "DeepHedger",
    "DegenerateDataError",
    "HedgebenchError",
    "HestonParams",
    "MetricsReport",
    "NormStats",
    "NumericError",
    "OptionSpec",
    "ParameterError",
    "ParseError",
    "PathBatch",
    "PathNormalizer",
    "PnLRecord",
    "PolicyParams",
    "TTestResult",
    "TrainConfig",
    "TrainResult",
    "backward",
    "compare",
    "compute_norm_stats",
    "compute_pnl",
    "convergence_epoch",
    "evaluate",
    "forward",
    "init_policy",
    "load_model",
    "loss_and_grad",
    "normalize",
    "pearson_correlation",
    "read_paths",
    "save_model",
    "simulate_paths",
    "split",
    "train",
    "welch_t_test",
    "write_paths",
]
