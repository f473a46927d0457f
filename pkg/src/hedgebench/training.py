"""Mini-batch training loop, convergence bookkeeping, and model persistence."""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import market, objective, optim, policy, rng
from .errors import NumericError, ParameterError, ParseError

log = logging.getLogger(__name__)

_MODEL_FORMAT = "hedgebench-model"
_MODEL_VERSION = 1
_VAL_CHUNK = 256

CURVE_HEADER = "epoch,train_loss,val_loss,val_mean_pnl,val_mean_cost,seconds"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    kfac_lr: float = 0.1
    kfac_damping: float = 1e-2
    kfac_ema_decay: float = 0.95
    cost_weight: float = 1.0
    seed: int = 7
    convergence_threshold: float | None = None
    record_timing: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.optimizer not in ("adam", "kfac"):
            raise ParameterError(f"optimizer must be 'adam' or 'kfac', got {self.optimizer!r}")


@dataclass
class EpochRecord:
    """Per-epoch curve entry; wall-clock seconds are telemetry and excluded
    from equality so determinism can be asserted on the numerical fields."""

    epoch: int
    train_loss: float
    val_loss: float
    val_mean_pnl: float
    val_mean_cost: float
    seconds: float = field(compare=False, default=0.0)


@dataclass
class TrainResult:
    params: policy.PolicyParams
    curve: list
    norm_stats: market.NormStats
    dropped_paths_per_epoch: int


def _validation_metrics(params, val_features, val_prices, option, cost_model, cost_weight):
    """Composite loss and means over the validation set, in fixed chunk order."""
    n = val_features.shape[0]
    hedges = np.empty((n, val_features.shape[1]))
    for lo in range(0, n, _VAL_CHUNK):
        hi = min(lo + _VAL_CHUNK, n)
        hedges[lo:hi], _ = policy.forward(params, val_features[lo:hi], want_cache=False)
    records = objective.compute_pnl(val_prices, hedges, option, cost_model)
    loss = float(records.pnl.var(ddof=1) + cost_weight * records.cost.mean())
    return loss, float(records.pnl.mean()), float(records.cost.mean())


def _kfac_batch_stats(cache, out_signals):
    """Flatten per-step output-layer statistics into [n, h+1] / [n, out]."""
    h_top = cache.hidden[-1]
    n_steps, n_batch, h_dim = h_top.shape
    acts = np.empty((n_steps * n_batch, h_dim + 1))
    acts[:, :h_dim] = h_top.reshape(n_steps * n_batch, h_dim)
    acts[:, h_dim] = 1.0
    return acts, out_signals.T.reshape(n_steps * n_batch, 1)


def _output_only_loss(params, cache, prices, option, cost_model, cost_weight):
    """Batch loss with the current output layer over cached hidden states."""
    h_top = cache.hidden[-1]
    n_steps, n_batch, h_dim = h_top.shape
    out_pre = (
        h_top.reshape(n_steps * n_batch, h_dim) @ params.tensors["out.w"].T
        + params.tensors["out.b"]
    ).reshape(n_steps, n_batch).T
    hedges = np.tanh(out_pre)
    records = objective.compute_pnl(prices, hedges, option, cost_model)
    return float(records.pnl.var(ddof=1) + cost_weight * records.cost.mean())


def train(train_batch, val_batch, arch, config, option, cost_model):
    """Train a policy on ``train_batch``, tracking metrics on ``val_batch``.

    Normalization statistics are computed on the training batch only and
    frozen for validation.  Every epoch shuffles path indices with an
    epoch-keyed stream of the config seed and iterates full batches (the
    ragged tail is dropped).  Fully deterministic for a fixed config.
    """
    stats = market.compute_norm_stats(train_batch)
    features = market.normalize(train_batch, stats)
    val_features = market.normalize(val_batch, stats)

    params = policy.init_policy(arch, rng.derive_seed(config.seed, rng.INIT_SALT))
    shuffle_seed = rng.derive_seed(config.seed, rng.SHUFFLE_SALT)

    n_train = train_batch.n_paths
    n_batches = n_train // config.batch_size
    if n_batches < 1:
        raise ParameterError(
            f"batch_size {config.batch_size} exceeds training set size {n_train}"
        )
    dropped = n_train - n_batches * config.batch_size
    if dropped:
        log.info("dropping %d ragged-tail paths per epoch (%d full batches of %d)",
                 dropped, n_batches, config.batch_size)

    use_kfac = config.optimizer == "kfac"
    if use_kfac:
        adam_keys = {k: t for k, t in params.tensors.items() if not k.startswith("out.")}
        adam_state = optim.init_adam(
            adam_keys, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
            epsilon=config.epsilon, weight_decay=config.weight_decay,
        )
        kfac_state = optim.init_kfac(
            arch.hidden_dim + 1, arch.output_dim,
            damping=config.kfac_damping, ema_decay=config.kfac_ema_decay,
            lr=config.kfac_lr,
        )
        reduction_ratio = None
    else:
        adam_state = optim.init_adam(
            params.tensors, lr=config.learning_rate, beta1=config.beta1,
            beta2=config.beta2, epsilon=config.epsilon,
            weight_decay=config.weight_decay,
        )

    curve = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(rng.stream_root(shuffle_seed, epoch - 1), n_train)
        batch_losses = np.empty(n_batches)
        for k in range(n_batches):
            idx = perm[k * config.batch_size : (k + 1) * config.batch_size]
            feats_b = features[idx]
            prices_b = train_batch.prices[idx]
            hedges, cache = policy.forward(params, feats_b)
            loss, d_hedges, _ = objective.loss_and_grad(
                prices_b, hedges, option, cost_model, config.cost_weight
            )
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {k}")
            batch_losses[k] = loss
            grads, out_signals = policy.backward(params, cache, d_hedges)
            if use_kfac:
                acts, out_grads = _kfac_batch_stats(cache, out_signals)
                optim.hybrid_step(
                    adam_state, kfac_state, params.tensors, grads, acts, out_grads,
                    reduction_ratio=reduction_ratio,
                    grad_scale=1.0 / acts.shape[0],
                )
                # Reduction ratio for the output-layer trust model: re-score
                # the batch with only the output layer moved, reusing the
                # cached hidden states (the quadratic model covers only the
                # output layer, so the LSTM stays at its pre-step values).
                loss_after = _output_only_loss(
                    params, cache, prices_b, option, cost_model, config.cost_weight
                )
                predicted = kfac_state.predicted_decrease
                if predicted is not None and predicted < 0 and np.isfinite(loss_after):
                    reduction_ratio = (loss_after - loss) / predicted
                else:
                    reduction_ratio = None
            else:
                optim.adam_step(adam_state, params.tensors, grads)
        val_loss, val_mean_pnl, val_mean_cost = _validation_metrics(
            params, val_features, val_batch.prices, option, cost_model,
            config.cost_weight,
        )
        seconds = time.perf_counter() - t0 if config.record_timing else 0.0
        curve.append(EpochRecord(
            epoch=epoch,
            train_loss=float(batch_losses.mean()),
            val_loss=val_loss,
            val_mean_pnl=val_mean_pnl,
            val_mean_cost=val_mean_cost,
            seconds=seconds,
        ))
    return TrainResult(params, curve, stats, dropped)


def convergence_epoch(curve, threshold):
    """Smallest epoch whose validation loss is <= threshold, else None."""
    if not curve:
        raise ParameterError("curve is empty")
    for record in curve:
        if record.val_loss <= threshold:
            return record.epoch
    return None


def write_curve(curve, destination):
    """Training-curve CSV: one row per epoch."""
    lines = [CURVE_HEADER]
    for r in curve:
        lines.append(
            f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_mean_pnl!r},"
            f"{r.val_mean_cost!r},{r.seconds!r}"
        )
    lines.append("")
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))


@dataclass
class LoadedModel:
    params: policy.PolicyParams
    norm_stats: market.NormStats
    train_seed: int
    option: objective.OptionSpec
    cost_model: objective.CostModel
    cost_weight: float


def save_model(destination, params, norm_stats, train_seed, option, cost_model,
               cost_weight=1.0):
    """Persist a trained policy as a structured text document.

    JSON with documented keys; all weight tensors are nested row-major
    arrays whose floats are shortest round-trip decimals, so a
    save/load cycle is bit-exact.
    """
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "arch": {
            "input_dim": params.arch.input_dim,
            "hidden_dim": params.arch.hidden_dim,
            "n_lstm_layers": params.arch.n_lstm_layers,
            "output_dim": params.arch.output_dim,
        },
        "train_seed": int(train_seed),
        "norm_stats": {
            "price_mean": norm_stats.price_mean,
            "price_std": norm_stats.price_std,
            "var_mean": norm_stats.var_mean,
            "var_std": norm_stats.var_std,
        },
        "objective": {
            "strike": option.strike,
            "side": option.side,
            "kind": option.kind,
            "cost_rate": cost_model.rate,
            "cost_weight": cost_weight,
        },
        "tensors": {name: params.tensors[name].tolist()
                    for name in sorted(params.tensors)},
    }
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(source):
    """Load a model document; validates format, version, and tensor shapes."""
    with open(source, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not a valid model document: {exc}", line=exc.lineno) from exc
    if doc.get("format") != _MODEL_FORMAT:
        raise ParseError(f"unexpected document format {doc.get('format')!r}")
    if doc.get("version") != _MODEL_VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}")
    try:
        arch = policy.ArchConfig(**doc["arch"])
        tensors = {name: np.array(t, dtype=np.float64)
                   for name, t in doc["tensors"].items()}
        params = policy.PolicyParams(arch, tensors)
        stats = market.NormStats(**doc["norm_stats"])
        obj = doc["objective"]
        option = objective.OptionSpec(strike=obj["strike"], side=obj["side"],
                                      kind=obj["kind"])
        cost_model = objective.CostModel(rate=obj["cost_rate"])
        cost_weight = float(obj["cost_weight"])
        train_seed = int(doc["train_seed"])
    except KeyError as exc:
        raise ParseError(f"missing model key {exc.args[0]!r}") from exc
    return LoadedModel(params, stats, train_seed, option, cost_model, cost_weight)
