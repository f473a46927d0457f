"""Correlated Heston price/variance path generation, normalization, and IO.

The price S and variance V follow

    dS = mu * S dt + sqrt(V) * S dW_s
    dV = kappa * (theta - V) dt + xi * sqrt(V) dW_v,   corr(dW_s, dW_v) = rho

discretized by an Euler scheme with full truncation: the variance is
clamped at zero inside both drift and diffusion and the updated variance
is clamped at zero again, so simulated variances are never negative.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import DegenerateDataError, NumericError, ParameterError, ParseError
from . import rng

DEFAULT_PRICE_FLOOR = 1e-8

_PATHS_FORMAT = "hedgebench-paths"
_PATHS_VERSION = 1
_PATHS_HEADER = "path,step,price,variance"


@dataclass(frozen=True)
class HestonParams:
    """Model coefficients plus the discretization grid (dt in years)."""

    s0: float = 100.0
    v0: float = 0.04
    theta: float = 0.04
    kappa: float = 2.0
    xi: float = 0.5
    rho: float = -0.7
    mu: float = 0.0
    dt: float = 1.0 / 250.0
    n_steps: int = 250

    def __post_init__(self):
        if not self.s0 > 0:
            raise ParameterError(f"s0 must be > 0, got {self.s0}")
        if self.v0 < 0:
            raise ParameterError(f"v0 must be >= 0, got {self.v0}")
        if self.theta < 0:
            raise ParameterError(f"theta must be >= 0, got {self.theta}")
        if self.kappa < 0:
            raise ParameterError(f"kappa must be >= 0, got {self.kappa}")
        if self.xi < 0:
            raise ParameterError(f"xi must be >= 0, got {self.xi}")
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must be in [-1, 1], got {self.rho}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ParameterError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def horizon(self):
        """Total simulated time T = dt * n_steps, in years."""
        return self.dt * self.n_steps


@dataclass
class PathBatch:
    """Simulated trajectories with provenance.

    ``prices`` and ``variances`` have shape [n_paths, n_steps + 1]; column 0
    holds the initial state (s0, v0) on every row.  ``price_clamps`` counts
    how often the price floor fired during generation (telemetry, carried
    through IO round trips).
    """

    prices: np.ndarray
    variances: np.ndarray
    seed: int
    params: HestonParams
    price_clamps: int = 0

    def __post_init__(self):
        self.prices = np.ascontiguousarray(self.prices, dtype=np.float64)
        self.variances = np.ascontiguousarray(self.variances, dtype=np.float64)
        if self.prices.ndim != 2 or self.prices.shape != self.variances.shape:
            raise ParameterError(
                f"prices/variances must be matching 2-d arrays, got shapes "
                f"{self.prices.shape} and {self.variances.shape}"
            )
        if self.prices.shape[1] != self.params.n_steps + 1:
            raise ParameterError(
                f"expected {self.params.n_steps + 1} columns for n_steps="
                f"{self.params.n_steps}, got {self.prices.shape[1]}"
            )
        if not np.isfinite(self.prices).all() or not np.isfinite(self.variances).all():
            raise ParameterError("paths contain non-finite entries")
        if not (self.prices > 0).all():
            raise ParameterError("all prices must be > 0")
        if not (self.variances >= 0).all():
            raise ParameterError("all variances must be >= 0")
        if not (self.prices[:, 0] == self.params.s0).all() or not (
            self.variances[:, 0] == self.params.v0
        ).all():
            raise ParameterError("column 0 must equal (s0, v0) on every row")

    @property
    def n_paths(self):
        return self.prices.shape[0]

    @property
    def n_steps(self):
        return self.prices.shape[1] - 1

    def __eq__(self, other):
        if not isinstance(other, PathBatch):
            return NotImplemented
        return (
            np.array_equal(self.prices, other.prices)
            and np.array_equal(self.variances, other.variances)
            and self.seed == other.seed
            and self.params == other.params
            and self.price_clamps == other.price_clamps
        )


@dataclass(frozen=True)
class NormStats:
    """Per-field centering/scaling constants frozen from a training batch."""

    price_mean: float
    price_std: float
    var_mean: float
    var_std: float

    def __post_init__(self):
        if not self.price_std > 0:
            raise ParameterError(f"price_std must be > 0, got {self.price_std}")
        if not self.var_std > 0:
            raise ParameterError(f"var_std must be > 0, got {self.var_std}")


def correlate(z1, z2, rho):
    """Map two independent standard normals to a correlated pair.

    Lower-triangular (Cholesky) factor of [[1, rho], [rho, 1]]:
    w_s = z1, w_v = rho * z1 + sqrt(1 - rho**2) * z2.
    """
    if not abs(rho) <= 1.0:
        raise ParameterError(f"rho must be in [-1, 1], got {rho}")
    w_v = rho * np.asarray(z1) + math.sqrt(1.0 - rho * rho) * np.asarray(z2)
    return z1, w_v


def heston_step(s, v, params, w_s, w_v, price_floor=DEFAULT_PRICE_FLOOR):
    """One Euler update of (price, variance) given correlated shocks.

    Vectorized over arrays.  Uses v+ = max(v, 0) inside drift and diffusion,
    clamps the updated variance at zero, and floors the price at
    ``price_floor`` so subsequent sqrt/positivity invariants hold.
    """
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.isfinite(s).all() and np.isfinite(v).all()):
        raise NumericError("non-finite (price, variance) input to heston_step")
    v_plus = np.maximum(v, 0.0)
    sqrt_v = np.sqrt(v_plus)
    sqrt_dt = math.sqrt(params.dt)
    s_next = s + params.mu * s * params.dt + sqrt_v * s * sqrt_dt * np.asarray(w_s)
    s_next = np.maximum(s_next, price_floor)
    v_next = v + params.kappa * (params.theta - v_plus) * params.dt
    v_next = v_next + params.xi * sqrt_v * sqrt_dt * np.asarray(w_v)
    v_next = np.maximum(v_next, 0.0)
    return s_next, v_next


def _simulate_chunk(params, seed, path_lo, path_hi, price_floor):
    """Simulate paths [path_lo, path_hi); independent of chunk boundaries."""
    n = path_hi - path_lo
    roots = rng.stream_root(seed, np.arange(path_lo, path_hi))
    prices = np.empty((n, params.n_steps + 1))
    variances = np.empty((n, params.n_steps + 1))
    prices[:, 0] = params.s0
    variances[:, 0] = params.v0
    s = prices[:, 0].copy()
    v = variances[:, 0].copy()
    clamps = 0
    for t in range(params.n_steps):
        z1, z2 = rng.normal_pair_at(roots, t)
        w_s, w_v = correlate(z1, z2, params.rho)
        try:
            s, v = heston_step(s, v, params, w_s, w_v, price_floor)
        except NumericError as exc:
            raise NumericError(f"step {t}, paths [{path_lo}, {path_hi}): {exc}") from exc
        if not (np.isfinite(s).all() and np.isfinite(v).all()):
            bad = int(np.flatnonzero(~(np.isfinite(s) & np.isfinite(v)))[0])
            raise NumericError(f"non-finite state at path {path_lo + bad}, step {t + 1}")
        clamps += int(np.count_nonzero(s <= price_floor))
        prices[:, t + 1] = s
        variances[:, t + 1] = v
    return prices, variances, clamps


def simulate_paths(params, n_paths, seed, price_floor=DEFAULT_PRICE_FLOOR, workers=1):
    """Simulate ``n_paths`` correlated trajectories.

    Path i consumes only the counter stream derived from (seed, i), so the
    output is bit-identical for any ``workers`` value or chunk layout.
    """
    if n_paths < 1:
        raise ParameterError(f"n_paths must be >= 1, got {n_paths}")
    workers = max(1, int(workers))
    chunk = n_paths if workers == 1 else max(256, -(-n_paths // workers))
    bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    if len(bounds) == 1:
        prices, variances, clamps = _simulate_chunk(params, seed, 0, n_paths, price_floor)
    else:
        prices = np.empty((n_paths, params.n_steps + 1))
        variances = np.empty((n_paths, params.n_steps + 1))
        clamps = 0
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_simulate_chunk, params, seed, lo, hi, price_floor)
                for lo, hi in bounds
            ]
            for (lo, hi), fut in zip(bounds, futures):
                p, v, c = fut.result()
                prices[lo:hi] = p
                variances[lo:hi] = v
                clamps += c
    return PathBatch(prices, variances, int(seed), params, price_clamps=clamps)


def compute_norm_stats(batch):
    """Mean and sample std (ddof=1) of the decision-point entries.

    Statistics cover exactly the entries ``normalize`` standardizes, i.e.
    columns 0..n_steps-1 of each field; the terminal column carries no
    hedging decision and is excluded from both.
    """
    if batch.n_paths < 1:
        raise DegenerateDataError("empty batch")
    p = batch.prices[:, :-1].ravel()
    v = batch.variances[:, :-1].ravel()
    if p.size < 2:
        raise DegenerateDataError("need at least 2 entries per field")
    price_mean, price_std = float(np.mean(p)), float(np.std(p, ddof=1))
    var_mean, var_std = float(np.mean(v)), float(np.std(v, ddof=1))
    # constant fields can land at ~1e-17 instead of exactly 0 (fp summation)
    if price_std <= 1e-13 * max(1.0, abs(price_mean)):
        raise DegenerateDataError("prices have zero spread")
    if var_std <= 1e-13 * max(1.0, abs(var_mean)):
        raise DegenerateDataError("variances have zero spread")
    return NormStats(price_mean, price_std, var_mean, var_std)


def normalize(batch, stats):
    """Standardized feature tensor [n_paths, n_steps, 2] at the decision points.

    Feature 0 is the standardized price, feature 1 the standardized
    variance; the terminal column is excluded (no decision at maturity).
    """
    features = np.empty((batch.n_paths, batch.n_steps, 2))
    features[:, :, 0] = (batch.prices[:, :-1] - stats.price_mean) / stats.price_std
    features[:, :, 1] = (batch.variances[:, :-1] - stats.var_mean) / stats.var_std
    return features


def split(batch, train_fraction):
    """Partition rows into (train, validation) by index prefix.

    Paths are i.i.d. by construction, so no shuffling: the first
    floor(n * train_fraction) rows train, the rest validate.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(batch.n_paths * train_fraction)
    if n_train < 1 or n_train >= batch.n_paths:
        raise ParameterError(
            f"split of {batch.n_paths} paths at fraction {train_fraction} "
            "leaves an empty side"
        )
    train = PathBatch(
        batch.prices[:n_train].copy(),
        batch.variances[:n_train].copy(),
        batch.seed,
        batch.params,
        price_clamps=batch.price_clamps,
    )
    val = PathBatch(
        batch.prices[n_train:].copy(),
        batch.variances[n_train:].copy(),
        batch.seed,
        batch.params,
        price_clamps=batch.price_clamps,
    )
    return train, val


def write_paths(batch, destination):
    """Write a batch as CSV with a provenance comment block.

    Layout: ``# key value`` comment lines (format marker, seed, clamp count,
    every model parameter), the header ``path,step,price,variance``, then one
    row per (path, step).  Floats are shortest round-trip decimals, UTF-8,
    LF line endings.
    """
    lines = [f"# format {_PATHS_FORMAT} v{_PATHS_VERSION}"]
    lines.append(f"# seed {batch.seed}")
    lines.append(f"# price_clamps {batch.price_clamps}")
    for f in fields(HestonParams):
        lines.append(f"# {f.name} {getattr(batch.params, f.name)!r}")
    lines.append(_PATHS_HEADER)
    n_steps = batch.n_steps
    prices = batch.prices
    variances = batch.variances
    for i in range(batch.n_paths):
        p_row = prices[i]
        v_row = variances[i]
        for t in range(n_steps + 1):
            lines.append(f"{i},{t},{float(p_row[t])!r},{float(v_row[t])!r}")
    lines.append("")
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))


def read_paths(source):
    """Read a batch written by ``write_paths`` (round-trips bit-exactly)."""
    meta = {}
    with open(source, "r", encoding="utf-8") as fh:
        line_no = 0
        for raw in fh:
            line_no += 1
            line = raw.strip()
            if line.startswith("#"):
                parts = line[1:].strip().split(None, 1)
                if len(parts) == 2:
                    meta[parts[0]] = parts[1]
                continue
            if line != _PATHS_HEADER:
                raise ParseError(
                    f"expected header {_PATHS_HEADER!r}, got {line!r}", line=line_no
                )
            break
        else:
            raise ParseError("missing header", line=line_no)
        header_line = line_no
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2, comments=None)
        except ValueError as exc:
            _locate_bad_row(source, header_line)
            raise ParseError(str(exc)) from exc
    if meta.get("format") != f"{_PATHS_FORMAT} v{_PATHS_VERSION}":
        raise ParseError(f"unsupported or missing format marker {meta.get('format')!r}")
    try:
        param_fields = {
            f.name: (int if f.name == "n_steps" else float)(meta[f.name])
            for f in fields(HestonParams)
        }
        seed = int(meta["seed"])
        clamps = int(meta.get("price_clamps", 0))
    except KeyError as exc:
        raise ParseError(f"missing provenance key {exc.args[0]!r}") from exc
    params = HestonParams(**param_fields)
    if data.shape[1] != 4:
        raise ParseError(f"expected 4 columns, got {data.shape[1]}")
    n_cols = params.n_steps + 1
    if data.shape[0] % n_cols != 0:
        raise ParseError(
            f"row count {data.shape[0]} is not a multiple of steps+1 ({n_cols})"
        )
    n_paths = data.shape[0] // n_cols
    path_idx = data[:, 0].astype(int)
    step_idx = data[:, 1].astype(int)
    expect_path = np.repeat(np.arange(n_paths), n_cols)
    expect_step = np.tile(np.arange(n_cols), n_paths)
    if not (np.array_equal(path_idx, expect_path) and np.array_equal(step_idx, expect_step)):
        bad = int(
            np.flatnonzero((path_idx != expect_path) | (step_idx != expect_step))[0]
        )
        raise ParseError("path/step indices out of order", line=header_line + 1 + bad)
    prices = data[:, 2].reshape(n_paths, n_cols)
    variances = data[:, 3].reshape(n_paths, n_cols)
    return PathBatch(prices, variances, seed, params, price_clamps=clamps)


def _locate_bad_row(source, header_line):
    """Re-scan a file that numpy rejected to report an exact line number."""
    with open(source, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if line_no <= header_line:
                continue
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", line=line_no)
            try:
                [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"unparseable row {line!r}", line=line_no) from None


def cir_mean(params, t=None):
    """Analytic mean of the variance process at time t (defaults to horizon)."""
    t = params.horizon if t is None else t
    return params.theta + (params.v0 - params.theta) * math.exp(-params.kappa * t)
