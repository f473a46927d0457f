"""Run configuration: flat ``section.key = value`` text with validated defaults.

Unset keys take the experiment defaults below; unknown keys are rejected.
``load_config`` returns a fully resolved ``RunConfig`` whose domain objects
(market parameters, architecture, training setup, instrument, cost model)
are ready to use, plus a stable content hash of the resolved values.
"""

import hashlib
from dataclasses import dataclass

from .errors import ConfigError
from .market import HestonParams
from .objective import CostModel, OptionSpec
from .policy import ArchConfig
from .training import TrainConfig


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text):
    if text.lower() in ("none", ""):
        return None
    return float(text)


# key -> (parser, default)
_SCHEMA = {
    "heston.s0": (float, 100.0),
    "heston.v0": (float, 0.04),
    "heston.theta": (float, 0.04),
    "heston.kappa": (float, 2.0),
    "heston.xi": (float, 0.5),
    "heston.rho": (float, -0.7),
    "heston.mu": (float, 0.0),
    "heston.dt": (float, 1.0 / 250.0),
    "heston.n_steps": (int, 250),
    "heston.price_floor": (float, 1e-8),
    "sim.n_train_paths": (int, 10000),
    "sim.n_val_paths": (int, 2000),
    "sim.seed": (int, 42),
    "net.hidden_dim": (int, 32),
    "net.layers": (int, 1),
    "train.epochs": (int, 100),
    "train.batch_size": (int, 32),
    "train.seed": (int, 7),
    "train.lambda": (float, 1.0),
    "train.convergence_threshold": (_parse_optional_float, None),
    "optim.kind": (str, "adam"),
    "optim.lr": (float, 1e-3),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.epsilon": (float, 1e-8),
    "optim.weight_decay": (float, 1e-4),
    "kfac.lr": (float, 0.1),
    "kfac.damping": (float, 1e-2),
    "kfac.ema_decay": (float, 0.95),
    "option.strike": (float, 100.0),
    "option.side": (str, "long"),
    "cost.rate": (float, 0.001),
}


@dataclass(frozen=True)
class SimSettings:
    n_train_paths: int
    n_val_paths: int
    seed: int

    def __post_init__(self):
        if self.n_train_paths < 1 or self.n_val_paths < 1:
            raise ConfigError("path counts must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    heston: HestonParams
    price_floor: float
    sim: SimSettings
    arch: ArchConfig
    training: TrainConfig
    option: OptionSpec
    cost_model: CostModel
    values: dict
    content_hash: str


def _parse_lines(text):
    """Parse ``key = value`` lines; returns {key: (value_text, line_no)}."""
    seen = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", line=line_no)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError("unknown key", key=key, line=line_no)
        if not value:
            raise ConfigError("empty value", key=key, line=line_no)
        seen[key] = (value, line_no)
    return seen


def _resolve(seen):
    values = {}
    lines = {}
    for key, (parser, default) in _SCHEMA.items():
        if key in seen:
            text, line_no = seen[key]
            try:
                values[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(str(exc), key=key, line=line_no) from exc
            lines[key] = line_no
        else:
            values[key] = default
            lines[key] = None
    return values, lines


def _hash_values(values):
    canonical = "\n".join(f"{k} = {values[k]!r}" for k in sorted(values))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(values, lines):
    heston_keys = ("heston.s0", "heston.v0", "heston.theta", "heston.kappa",
                   "heston.xi", "heston.rho", "heston.mu", "heston.dt",
                   "heston.n_steps")
    try:
        heston = HestonParams(
            s0=values["heston.s0"], v0=values["heston.v0"],
            theta=values["heston.theta"], kappa=values["heston.kappa"],
            xi=values["heston.xi"], rho=values["heston.rho"],
            mu=values["heston.mu"], dt=values["heston.dt"],
            n_steps=values["heston.n_steps"],
        )
    except ValueError as exc:
        raise _named_error(exc, lines, heston_keys) from exc
    if not values["heston.price_floor"] > 0:
        raise ConfigError("price_floor must be > 0", key="heston.price_floor",
                          line=lines.get("heston.price_floor"))
    sim = SimSettings(values["sim.n_train_paths"], values["sim.n_val_paths"],
                      values["sim.seed"])
    try:
        arch = ArchConfig(input_dim=2, hidden_dim=values["net.hidden_dim"],
                          n_lstm_layers=values["net.layers"], output_dim=1)
    except ValueError as exc:
        raise _named_error(exc, lines, ("net.hidden_dim", "net.layers")) from exc
    if values["optim.kind"] not in ("adam", "kfac"):
        raise ConfigError(f"must be 'adam' or 'kfac', got {values['optim.kind']!r}",
                          key="optim.kind", line=lines.get("optim.kind"))
    if not values["kfac.damping"] > 0:
        raise ConfigError("damping must be > 0", key="kfac.damping",
                          line=lines.get("kfac.damping"))
    if not 0.0 < values["kfac.ema_decay"] < 1.0:
        raise ConfigError("ema_decay must be in (0, 1)", key="kfac.ema_decay",
                          line=lines.get("kfac.ema_decay"))
    try:
        training = TrainConfig(
            epochs=values["train.epochs"], batch_size=values["train.batch_size"],
            optimizer=values["optim.kind"], learning_rate=values["optim.lr"],
            beta1=values["optim.beta1"], beta2=values["optim.beta2"],
            epsilon=values["optim.epsilon"], weight_decay=values["optim.weight_decay"],
            kfac_lr=values["kfac.lr"], kfac_damping=values["kfac.damping"],
            kfac_ema_decay=values["kfac.ema_decay"], cost_weight=values["train.lambda"],
            seed=values["train.seed"],
            convergence_threshold=values["train.convergence_threshold"],
        )
    except ValueError as exc:
        raise _named_error(exc, lines,
                           ("train.epochs", "train.batch_size", "optim.kind")) from exc
    try:
        option = OptionSpec(strike=values["option.strike"], side=values["option.side"])
    except ValueError as exc:
        raise _named_error(exc, lines, ("option.strike", "option.side")) from exc
    try:
        cost_model = CostModel(rate=values["cost.rate"])
    except ValueError as exc:
        raise _named_error(exc, lines, ("cost.rate",)) from exc
    return RunConfig(
        heston=heston,
        price_floor=values["heston.price_floor"],
        sim=sim,
        arch=arch,
        training=training,
        option=option,
        cost_model=cost_model,
        values=values,
        content_hash=_hash_values(values),
    )


def _named_error(exc, lines, candidate_keys):
    """Attach the offending key: prefer one whose name opens the message."""
    message = str(exc)
    for key in candidate_keys:
        if message.startswith(key.split(".", 1)[1]):
            return ConfigError(message, key=key, line=lines.get(key))
    key = next((k for k in candidate_keys if lines.get(k) is not None), candidate_keys[0])
    return ConfigError(message, key=key, line=lines.get(key))


def load_config_text(text):
    """Parse, default-fill, validate, and hash a config given as a string."""
    seen = _parse_lines(text)
    values, lines = _resolve(seen)
    return _build(values, lines)


def load_config(source=None):
    """Load a config file (or pure defaults when ``source`` is None)."""
    if source is None:
        return load_config_text("")
    with open(source, "r", encoding="utf-8") as fh:
        return load_config_text(fh.read())


def default_config():
    return load_config_text("")
