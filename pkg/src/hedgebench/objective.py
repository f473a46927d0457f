"""Hedged-portfolio P&L, proportional transaction costs, and the training loss.

Positions are levels: hedge[t] is the quantity of the underlying held over
(t, t+1].  A path trades |hedge[0]| at entry, |hedge[t] - hedge[t-1]| at each
rebalance, and |hedge[T-1]| at the terminal unwind, each charged at
``rate * price * traded quantity``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

_SIDES = ("short", "long")


@dataclass(frozen=True)
class OptionSpec:
    """Instrument being hedged; ``side`` is the book's position in it."""

    strike: float = 100.0
    side: str = "long"
    kind: str = "european_call"

    def __post_init__(self):
        if not self.strike > 0:
            raise ParameterError(f"strike must be > 0, got {self.strike}")
        if self.side not in _SIDES:
            raise ParameterError(f"side must be one of {_SIDES}, got {self.side!r}")
        if self.kind != "european_call":
            raise ParameterError(f"unsupported option kind {self.kind!r}")

    @property
    def side_sign(self):
        """+1 for a short book (payoff is owed), -1 for a long book."""
        return 1.0 if self.side == "short" else -1.0


@dataclass(frozen=True)
class CostModel:
    """Proportional cost per unit of traded notional."""

    rate: float = 0.001

    def __post_init__(self):
        if self.rate < 0:
            raise ParameterError(f"rate must be >= 0, got {self.rate}")


@dataclass
class PnLRecord:
    """Per-path terminal ledger; fields are scalars or aligned vectors."""

    pnl: np.ndarray
    cost: np.ndarray
    trading_gain: np.ndarray


def option_payoff(s_terminal, spec):
    """Raw (unsigned) payoff at maturity; european call: max(S - K, 0)."""
    return np.maximum(np.asarray(s_terminal, dtype=np.float64) - spec.strike, 0.0)


def _as_2d(prices, hedges):
    prices = np.atleast_2d(np.asarray(prices, dtype=np.float64))
    hedges = np.atleast_2d(np.asarray(hedges, dtype=np.float64))
    if prices.shape[0] != hedges.shape[0] or prices.shape[1] != hedges.shape[1] + 1:
        raise ParameterError(
            f"prices {prices.shape} and hedges {hedges.shape} are inconsistent "
            "(need one more price column than hedge steps)"
        )
    return prices, hedges


def _traded(hedges):
    """Signed trades tau[t] for t = 0..T: entry, rebalances, unwind."""
    n, steps = hedges.shape
    tau = np.empty((n, steps + 1))
    tau[:, 0] = hedges[:, 0]
    tau[:, 1:steps] = hedges[:, 1:] - hedges[:, :-1]
    tau[:, steps] = -hedges[:, steps - 1]
    return tau


def transaction_costs(hedges, prices, model):
    """Total proportional cost per path: rate * sum_t price[t] * |trade[t]|."""
    single = np.asarray(hedges).ndim == 1
    prices, hedges = _as_2d(prices, hedges)
    cost = model.rate * np.sum(prices * np.abs(_traded(hedges)), axis=1)
    return float(cost[0]) if single else cost


def compute_pnl(prices, hedges, spec, model):
    """Terminal P&L per path.

    trading_gain = sum_t hedge[t] * (price[t+1] - price[t]);
    pnl = trading_gain - cost - side_sign * payoff(S_T).
    """
    single = np.asarray(hedges).ndim == 1
    prices, hedges = _as_2d(prices, hedges)
    gain = np.sum(hedges * np.diff(prices, axis=1), axis=1)
    cost = model.rate * np.sum(prices * np.abs(_traded(hedges)), axis=1)
    payoff = option_payoff(prices[:, -1], spec)
    pnl = gain - cost - spec.side_sign * payoff
    if single:
        return PnLRecord(float(pnl[0]), float(cost[0]), float(gain[0]))
    return PnLRecord(pnl, cost, gain)


def loss_and_grad(prices, hedges, spec, model, cost_weight, records=None):
    """Composite loss and its exact gradient in the hedge ratios.

    loss = Var_sample(pnl) + cost_weight * mean(cost), with costs also
    flowing through each path's pnl.  The |trade| kinks use the symmetric
    subgradient sign(0) = 0, so an untraded book is stationary.

    Returns (loss, d_hedges, records).
    """
    prices, hedges = _as_2d(prices, hedges)
    n = prices.shape[0]
    if n < 2:
        raise ParameterError(f"need >= 2 paths for the variance term, got {n}")
    if records is None:
        records = compute_pnl(prices, hedges, spec, model)
    pnl = records.pnl
    mean_pnl = pnl.mean()
    loss = float(pnl.var(ddof=1) + cost_weight * records.cost.mean())

    # d cost / d hedge[t] = rate * (S_t sign(tau_t) - S_{t+1} sign(tau_{t+1}))
    sign_tau = np.sign(_traded(hedges))
    d_cost = model.rate * (prices[:, :-1] * sign_tau[:, :-1] - prices[:, 1:] * sign_tau[:, 1:])
    d_gain = np.diff(prices, axis=1)
    w = (2.0 / (n - 1)) * (pnl - mean_pnl)
    d_hedges = w[:, None] * (d_gain - d_cost) + (cost_weight / n) * d_cost
    return loss, d_hedges, records


def write_pnl_csv(records, destination):
    """Per-path evaluation CSV: ``path,pnl,cost,trading_gain``."""
    pnl = np.atleast_1d(records.pnl)
    cost = np.atleast_1d(records.cost)
    gain = np.atleast_1d(records.trading_gain)
    lines = ["path,pnl,cost,trading_gain"]
    for i in range(pnl.shape[0]):
        lines.append(f"{i},{float(pnl[i])!r},{float(cost[i])!r},{float(gain[i])!r}")
    lines.append("")
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
