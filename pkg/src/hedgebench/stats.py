"""Validation metrics, hypothesis tests, correlation diagnostics, A/B comparison.

The two-sided t-test p-value is computed from the regularized incomplete
beta function evaluated by a modified-Lentz continued fraction (no external
stats dependency), so results are reproducible to the documented accuracy
on any platform.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import objective, policy
from .errors import DegenerateDataError, ParameterError, ParseError

_REPORT_FORMAT = "hedgebench-report"
_REPORT_VERSION = 1
_CHUNK = 256
_CF_MAX_ITER = 300
_CF_EPS = 1e-16
_CF_TINY = 1e-300
_SHARPE_STD_FLOOR = 1e-15

HISTOGRAM_HEADER = "bin_left,bin_right,count_a,count_b"


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b) with relative accuracy well inside 1e-10 for moderate a, b."""
    if a <= 0 or b <= 0:
        raise ParameterError(f"a and b must be > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ParameterError(f"df must be > 0, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


def welch_t_test(x, y):
    """Welch's unequal-variance two-sample t-test, two-sided.

    t = (mean_x - mean_y) / sqrt(s2x/n + s2y/m) with Welch-Satterthwaite
    degrees of freedom.  When both samples have zero variance the statistic
    degenerates: equal means give (t=0, p=1), unequal means
    (t=+-inf, p=0), both with pooled-sample df.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = x.size, y.size
    if n < 2 or m < 2:
        raise ParameterError(f"need >= 2 observations per sample, got {n} and {m}")
    mean_diff = x.mean() - y.mean()
    vx = float(x.var(ddof=1))
    vy = float(y.var(ddof=1))
    se2 = vx / n + vy / m
    if se2 == 0.0:
        df = float(n + m - 2)
        if mean_diff == 0.0:
            return TTestResult(0.0, df, 1.0)
        return TTestResult(math.copysign(math.inf, mean_diff), df, 0.0)
    t = mean_diff / math.sqrt(se2)
    df = se2 * se2 / ((vx / n) ** 2 / (n - 1) + (vy / m) ** 2 / (m - 1))
    return TTestResult(float(t), float(df), float(student_t_two_sided_p(t, df)))


def pearson_correlation(x, y):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ParameterError(f"need two equal-length vectors (>= 2), got {x.shape} / {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    ssx = float(xc @ xc)
    ssy = float(yc @ yc)
    if ssx == 0.0 or ssy == 0.0:
        raise DegenerateDataError("zero variance in a correlation input")
    return float((xc @ yc) / math.sqrt(ssx * ssy))


def level_series_correlation(batch):
    """Pooled correlation between price and variance levels at decision points.

    Pearson r is affine-invariant, so this equals the correlation between
    the standardized level series that the diagnostic plots display.
    """
    return pearson_correlation(batch.prices[:, :-1].ravel(), batch.variances[:, :-1].ravel())


@dataclass
class MetricsReport:
    """Per-path P&L/cost vectors plus the derived scalars."""

    pnl: np.ndarray
    cost: np.ndarray
    pnl_variance: float
    mean_cost: float
    mean_pnl: float
    sharpe: float
    n_paths: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pnl = np.asarray(self.pnl, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.pnl.shape != self.cost.shape or self.pnl.ndim != 1:
            raise ParameterError("pnl and cost must be equal-length vectors")
        if self.n_paths != self.pnl.size or self.n_paths < 2:
            raise ParameterError(f"n_paths {self.n_paths} inconsistent with vectors")
        checks = (
            (self.pnl_variance, float(self.pnl.var(ddof=1))),
            (self.mean_cost, float(self.cost.mean())),
            (self.mean_pnl, float(self.pnl.mean())),
            (self.sharpe, _sharpe(self.pnl)),
        )
        for got, expect in checks:
            if abs(got - expect) > 1e-12 * max(1.0, abs(expect)):
                raise ParameterError(
                    f"scalar {got!r} inconsistent with vectors (expected {expect!r})"
                )


def _sharpe(pnl):
    std = float(np.std(pnl, ddof=1))
    if std < _SHARPE_STD_FLOOR:
        return 0.0
    return float(np.mean(pnl)) / std


def metrics_from_vectors(pnl, cost, provenance=None):
    pnl = np.asarray(pnl, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    return MetricsReport(
        pnl=pnl,
        cost=cost,
        pnl_variance=float(pnl.var(ddof=1)),
        mean_cost=float(cost.mean()),
        mean_pnl=float(pnl.mean()),
        sharpe=_sharpe(pnl),
        n_paths=int(pnl.size),
        provenance=provenance or {},
    )


def evaluate_with_records(params, norm_stats, batch, option, cost_model, provenance=None):
    """Run a policy over a validation batch; returns (report, per-path records)."""
    from . import market  # local import to avoid a cycle at module load

    if batch.n_paths < 2:
        raise DegenerateDataError("need >= 2 validation paths")
    features = market.normalize(batch, norm_stats)
    hedges = np.empty((batch.n_paths, batch.n_steps))
    for lo in range(0, batch.n_paths, _CHUNK):
        hi = min(lo + _CHUNK, batch.n_paths)
        hedges[lo:hi], _ = policy.forward(params, features[lo:hi], want_cache=False)
    records = objective.compute_pnl(batch.prices, hedges, option, cost_model)
    report = metrics_from_vectors(records.pnl, records.cost, provenance)
    report.provenance.setdefault("option", {"strike": option.strike, "side": option.side,
                                            "kind": option.kind})
    report.provenance.setdefault("cost_rate", cost_model.rate)
    return report, records


def evaluate(params, norm_stats, batch, option, cost_model, provenance=None):
    """Terminal metrics of a policy over a validation batch."""
    report, _ = evaluate_with_records(params, norm_stats, batch, option, cost_model,
                                      provenance)
    return report


def percent_reduction(baseline, candidate):
    """100 * (1 - candidate/baseline); positive means the candidate is lower."""
    if baseline == 0:
        return math.nan
    return 100.0 * (1.0 - candidate / baseline)


def percent_change(baseline, candidate):
    """Signed relative change in percent, against |baseline|."""
    if baseline == 0:
        return math.nan
    return 100.0 * (candidate - baseline) / abs(baseline)


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    report_a: MetricsReport
    report_b: MetricsReport
    pnl_test: TTestResult
    cost_test: TTestResult
    variance_reduction_pct: float
    cost_reduction_pct: float
    sharpe_change_pct: float
    convergence_threshold: float | None = None
    convergence_epoch_a: int | None = None
    convergence_epoch_b: int | None = None

    def render(self):
        """Plain-text significance and performance tables."""
        a, b = self.label_a, self.label_b
        ra, rb = self.report_a, self.report_b
        lines = [
            f"A/B comparison: {a} vs {b} ({ra.n_paths} validation paths)",
            "",
            "Statistical significance",
            f"{'Metric':<34}{'t-statistic':>12}{'p-value':>12}  inference",
        ]
        for name, test in (("P&L differential", self.pnl_test),
                           ("Transaction cost differential", self.cost_test)):
            verdict = "significant at 5%" if test.p_value < 0.05 else "not significant"
            lines.append(
                f"{name:<34}{test.t_statistic:>12.4f}{_fmt_p(test.p_value):>12}  {verdict}"
            )
        lines += [
            "",
            "Performance metrics",
            f"{'Model':<10}{'P&L variance':>14}{'Mean trans. cost':>18}{'Sharpe ratio':>14}",
            f"{a:<10}{ra.pnl_variance:>14.6f}{ra.mean_cost:>18.6f}{ra.sharpe:>14.4f}",
            f"{b:<10}{rb.pnl_variance:>14.6f}{rb.mean_cost:>18.6f}{rb.sharpe:>14.4f}",
            "",
            f"Change {a} -> {b}: P&L variance reduction "
            f"{self.variance_reduction_pct:.2f}%, transaction cost reduction "
            f"{self.cost_reduction_pct:.2f}%, Sharpe change "
            f"{self.sharpe_change_pct:+.2f}%",
        ]
        if self.convergence_threshold is not None:
            lines.append(
                f"Epochs to validation loss <= {self.convergence_threshold!r}: "
                f"{a}: {_fmt_epoch(self.convergence_epoch_a)}, "
                f"{b}: {_fmt_epoch(self.convergence_epoch_b)}"
            )
        lines.append("")
        return "\n".join(lines)


def _fmt_p(p):
    return "<1e-06" if p < 1e-6 else f"{p:.4f}"


def _fmt_epoch(e):
    return "never" if e is None else str(e)


def compare(report_a, report_b, label_a="adam", label_b="kfac"):
    """Welch tests plus percent changes between two evaluation reports.

    Both reports must come from the same validation set (equal path counts).
    """
    if report_a.n_paths != report_b.n_paths:
        raise ParameterError(
            f"reports cover different path counts: {report_a.n_paths} vs {report_b.n_paths}"
        )
    return ComparisonReport(
        label_a=label_a,
        label_b=label_b,
        report_a=report_a,
        report_b=report_b,
        pnl_test=welch_t_test(report_a.pnl, report_b.pnl),
        cost_test=welch_t_test(report_a.cost, report_b.cost),
        variance_reduction_pct=percent_reduction(report_a.pnl_variance, report_b.pnl_variance),
        cost_reduction_pct=percent_reduction(report_a.mean_cost, report_b.mean_cost),
        sharpe_change_pct=percent_change(report_a.sharpe, report_b.sharpe),
    )


def histogram_data(pnl_a, pnl_b, n_bins=50):
    """Shared-bin histogram counts over the pooled P&L range.

    Returns (edges [n_bins+1], counts_a [n_bins], counts_b [n_bins]).
    """
    pooled = np.concatenate([np.asarray(pnl_a, float), np.asarray(pnl_b, float)])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    counts_a, _ = np.histogram(pnl_a, bins=edges)
    counts_b, _ = np.histogram(pnl_b, bins=edges)
    return edges, counts_a, counts_b


def write_histogram_csv(pnl_a, pnl_b, destination, n_bins=50):
    edges, counts_a, counts_b = histogram_data(pnl_a, pnl_b, n_bins)
    lines = [HISTOGRAM_HEADER]
    for i in range(len(counts_a)):
        lines.append(f"{float(edges[i])!r},{float(edges[i + 1])!r},{int(counts_a[i])},{int(counts_b[i])}")
    lines.append("")
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))


def write_report(report, destination):
    """Report document: scalars, both per-path vectors, provenance block."""
    doc = {
        "format": _REPORT_FORMAT,
        "version": _REPORT_VERSION,
        "n_paths": report.n_paths,
        "pnl_variance": report.pnl_variance,
        "mean_cost": report.mean_cost,
        "mean_pnl": report.mean_pnl,
        "sharpe": report.sharpe,
        "provenance": report.provenance,
        "pnl": report.pnl.tolist(),
        "cost": report.cost.tolist(),
    }
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_report(source):
    with open(source, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not a valid report document: {exc}", line=exc.lineno) from exc
    if doc.get("format") != _REPORT_FORMAT:
        raise ParseError(f"unexpected document format {doc.get('format')!r}")
    if doc.get("version") != _REPORT_VERSION:
        raise ParseError(f"unsupported report version {doc.get('version')!r}")
    try:
        return MetricsReport(
            pnl=np.array(doc["pnl"], dtype=np.float64),
            cost=np.array(doc["cost"], dtype=np.float64),
            pnl_variance=doc["pnl_variance"],
            mean_cost=doc["mean_cost"],
            mean_pnl=doc["mean_pnl"],
            sharpe=doc["sharpe"],
            n_paths=doc["n_paths"],
            provenance=doc.get("provenance", {}),
        )
    except KeyError as exc:
        raise ParseError(f"missing report key {exc.args[0]!r}") from exc
