"""Statistical acceptance machinery: estimates, goodness-of-fit tests, retries.

Every distributional test runs at a fixed significance of 0.001. Thresholds
are the asymptotic ones:

* one-sample KS: ``1.949 / sqrt(n)``
* two-sample KS: ``1.949 * sqrt((n + m) / (n * m))``
* chi-square: the 0.999 quantile with ``bins - 1`` degrees of freedom
* characteristic-function distance: 3 standard errors at every grid point
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

import numpy as np
from scipy import stats as sps
from tenacity import Retrying, retry_if_result, stop_after_attempt

logger = logging.getLogger(__name__)

KS_COEFFICIENT = 1.949
SIGNIFICANCE = 0.001
SIGMA_MULTIPLIER = 3.0
# Seed stride between a failed attempt and its single retry.
FRESH_SEED_STRIDE = 0x9E3779B97F4A7C15


@dataclass(frozen=True, slots=True)
class EstimateReport:
    """A Monte-Carlo estimate with its 3-sigma interval and provenance."""

    estimate: float
    n: int
    std_error: float
    ci_low: float
    ci_high: float
    seeds: tuple[int, ...] = ()
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.std_error < 0 or math.isnan(self.std_error):
            raise ValueError(f"std_error must be non-negative, got {self.std_error}.")
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise ValueError("Confidence interval must contain the estimate.")

    @classmethod
    def from_moments(
        cls,
        estimate: float,
        n: int,
        std_error: float,
        seeds: Iterable[int] = (),
        diagnostics: Mapping[str, Any] | None = None,
    ) -> "EstimateReport":
        half_width = SIGMA_MULTIPLIER * std_error
        return cls(
            estimate=float(estimate),
            n=int(n),
            std_error=float(std_error),
            ci_low=float(estimate - half_width),
            ci_high=float(estimate + half_width),
            seeds=tuple(int(s) for s in seeds),
            diagnostics=dict(diagnostics or {}),
        )

    def scaled(self, factor: float) -> "EstimateReport":
        """The same estimate multiplied by a non-negative constant."""
        if factor < 0:
            raise ValueError("Scale factor must be non-negative.")
        return EstimateReport.from_moments(
            self.estimate * factor,
            self.n,
            self.std_error * factor,
            self.seeds,
            self.diagnostics,
        )

    def agrees_with(self, other: "EstimateReport", k: float = SIGMA_MULTIPLIER) -> bool:
        return agreement(self, other, k).passed

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["seeds"] = list(self.seeds)
        payload["diagnostics"] = dict(self.diagnostics)
        return payload


@dataclass(frozen=True, slots=True)
class StatTestResult:
    """Outcome of a test statistic compared against its threshold."""

    name: str
    statistic: float
    threshold: float
    p_proxy: float
    passed: bool
    n: int
    details: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.passed != (self.statistic < self.threshold):
            raise ValueError("passed must equal statistic < threshold.")

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["details"] = dict(self.details)
        return payload


def _result(
    name: str,
    statistic: float,
    threshold: float,
    p_proxy: float,
    n: int,
    **details: Any,
) -> StatTestResult:
    statistic = float(statistic)
    threshold = float(threshold)
    return StatTestResult(
        name=name,
        statistic=statistic,
        threshold=threshold,
        p_proxy=float(p_proxy),
        passed=statistic < threshold,
        n=int(n),
        details=details,
    )


def _as_finite_array(samples: Iterable[float] | np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise ValueError(f"{what} needs at least one sample.")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} received NaN or infinite samples.")
    return values


# ----------------------------------------------------------------------
# Estimators
# ----------------------------------------------------------------------
def mean_ci(
    samples: Iterable[float] | np.ndarray,
    seeds: Iterable[int] = (),
    diagnostics: Mapping[str, Any] | None = None,
) -> EstimateReport:
    """Sample mean with standard error ``s / sqrt(n)`` and a 3-sigma interval."""
    values = _as_finite_array(samples, "mean_ci").ravel()
    n = values.size
    estimate = float(values.mean())
    std_error = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimateReport.from_moments(estimate, n, std_error, seeds, diagnostics)


def weighted_mean_ci(
    values: Iterable[float] | np.ndarray,
    weights: Iterable[float] | np.ndarray,
    seeds: Iterable[int] = (),
    diagnostics: Mapping[str, Any] | None = None,
) -> EstimateReport:
    """Self-normalised weighted mean ``sum(w v) / sum(w)``.

    The standard error is the delta-method one for a ratio of means,
    ``sqrt(sum(w**2 (v - r)**2)) / sum(w)``.
    """
    v = _as_finite_array(values, "weighted_mean_ci").ravel()
    w = _as_finite_array(weights, "weighted_mean_ci").ravel()
    if v.shape != w.shape:
        raise ValueError("values and weights must have the same length.")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative.")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("weights sum to zero; the weighted mean is undefined.")
    ratio = float(np.dot(w, v) / total)
    std_error = float(math.sqrt(np.sum(w**2 * (v - ratio) ** 2)) / total)
    effective_n = total**2 / float(np.sum(w**2))
    extra = {"effective_sample_size": effective_n}
    extra.update(diagnostics or {})
    return EstimateReport.from_moments(ratio, v.size, std_error, seeds, extra)


# ----------------------------------------------------------------------
# Tests
# ----------------------------------------------------------------------
def ks_test(
    samples: Iterable[float] | np.ndarray,
    cdf: Callable[[np.ndarray], np.ndarray],
    name: str = "ks",
) -> StatTestResult:
    """One-sample Kolmogorov-Smirnov test against ``cdf``.

    Samples are sorted internally; NaN or infinite samples are rejected.
    """
    values = _as_finite_array(samples, "ks_test").ravel()
    n = values.size
    if n < 1000:
        raise ValueError(f"ks_test needs at least 1000 samples, got {n}.")
    outcome = sps.kstest(np.sort(values), cdf)
    return _result(
        name,
        outcome.statistic,
        KS_COEFFICIENT / math.sqrt(n),
        outcome.pvalue,
        n,
        formula="1.949/sqrt(n)",
    )


def ks_2sample(
    first: Iterable[float] | np.ndarray,
    second: Iterable[float] | np.ndarray,
    name: str = "ks_2sample",
) -> StatTestResult:
    a = _as_finite_array(first, "ks_2sample").ravel()
    b = _as_finite_array(second, "ks_2sample").ravel()
    n, m = a.size, b.size
    if min(n, m) < 100:
        raise ValueError("ks_2sample needs at least 100 samples on each side.")
    outcome = sps.ks_2samp(a, b)
    threshold = KS_COEFFICIENT * math.sqrt((n + m) / (n * m))
    return _result(
        name,
        outcome.statistic,
        threshold,
        outcome.pvalue,
        n + m,
        n_first=n,
        n_second=m,
        formula="1.949*sqrt((n+m)/(n*m))",
    )


def chi_square_counts(
    observed: Sequence[float] | np.ndarray,
    expected: Sequence[float] | np.ndarray,
    name: str = "chi_square",
    min_expected: float = 5.0,
) -> StatTestResult:
    """Pearson chi-square on binned counts, pooling sparse bins from the right.

    Adjacent bins are merged until every pooled bin expects at least
    ``min_expected`` events, then the statistic is compared with the 0.999
    quantile of chi-square on ``bins - 1`` degrees of freedom.
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape or obs.ndim != 1:
        raise ValueError("observed and expected must be 1-D arrays of equal length.")
    if np.any(exp < 0):
        raise ValueError("expected counts must be non-negative.")
    pooled_obs: list[float] = []
    pooled_exp: list[float] = []
    acc_obs = acc_exp = 0.0
    for o, e in zip(obs, exp):
        acc_obs += o
        acc_exp += e
        if acc_exp >= min_expected:
            pooled_obs.append(acc_obs)
            pooled_exp.append(acc_exp)
            acc_obs = acc_exp = 0.0
    if acc_exp > 0 or acc_obs > 0:
        if pooled_exp:
            pooled_obs[-1] += acc_obs
            pooled_exp[-1] += acc_exp
        else:
            pooled_obs.append(acc_obs)
            pooled_exp.append(acc_exp)
    bins = len(pooled_exp)
    if bins < 2:
        raise ValueError("chi-square needs at least two populated bins.")
    o_arr = np.array(pooled_obs)
    e_arr = np.array(pooled_exp)
    statistic = float(np.sum((o_arr - e_arr) ** 2 / e_arr))
    dof = bins - 1
    return _result(
        name,
        statistic,
        sps.chi2.ppf(1.0 - SIGNIFICANCE, dof),
        sps.chi2.sf(statistic, dof),
        int(obs.sum()),
        bins=bins,
        dof=dof,
    )


def chi_square_uniform(
    samples: Iterable[float] | np.ndarray,
    bins: int = 20,
    low: float = 0.0,
    high: float = 1.0,
    name: str = "chi_square_uniform",
) -> StatTestResult:
    """Chi-square test of uniformity on ``[low, high]`` with equal-width bins."""
    values = _as_finite_array(samples, "chi_square_uniform").ravel()
    if bins < 2:
        raise ValueError("chi_square_uniform needs at least two bins.")
    if np.any(values < low) or np.any(values > high):
        raise ValueError(f"samples fall outside [{low}, {high}].")
    counts, _ = np.histogram(values, bins=bins, range=(low, high))
    expected = np.full(bins, values.size / bins)
    return chi_square_counts(counts, expected, name=name, min_expected=0.0)


def chi_square_poisson(
    counts: Iterable[int] | np.ndarray,
    mean: float,
    name: str = "chi_square_poisson",
) -> StatTestResult:
    """Goodness of fit of integer counts to Poisson(mean)."""
    values = np.asarray(list(counts) if not isinstance(counts, np.ndarray) else counts)
    values = _as_finite_array(values, "chi_square_poisson").astype(int)
    if mean <= 0:
        raise ValueError("Poisson mean must be positive.")
    top = int(max(values.max(), sps.poisson.ppf(1.0 - 1e-9, mean)))
    observed = np.bincount(values, minlength=top + 1)[: top + 1].astype(float)
    probs = sps.poisson.pmf(np.arange(top + 1), mean)
    probs[-1] += sps.poisson.sf(top, mean)
    return chi_square_counts(observed, probs * values.size, name=name)


def cf_distance(
    samples: Iterable[Sequence[float]] | np.ndarray,
    target_cf: Callable[[np.ndarray], complex],
    u_grid: Sequence[Sequence[float]] | np.ndarray,
    name: str = "cf_distance",
) -> StatTestResult:
    """Compares the empirical characteristic function with ``target_cf``.

    For each ``u`` the real and imaginary parts of ``mean(exp(i u.X))`` are
    compared with the target in units of their own Monte-Carlo standard
    errors. The statistic is the largest standardised deviation; it passes
    below 3.
    """
    points = _as_finite_array(samples, "cf_distance")
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if n < 10_000:
        raise ValueError(f"cf_distance needs at least 10^4 samples, got {n}.")
    grid = np.asarray(u_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("cf_distance needs a non-empty u grid.")
    if grid.ndim == 1:
        grid = grid[:, None] if points.shape[1] == 1 else grid[None, :]
    if grid.shape[1] != points.shape[1]:
        raise ValueError("u grid and samples must have the same dimension.")

    per_point: list[dict[str, float]] = []
    worst = 0.0
    for u in grid:
        phase = points @ u
        cos_part = np.cos(phase)
        sin_part = np.sin(phase)
        target = complex(target_cf(u))
        deviations = []
        for part, expected in ((cos_part, target.real), (sin_part, target.imag)):
            se = float(part.std(ddof=1) / math.sqrt(n))
            gap = abs(float(part.mean()) - expected)
            if se > 0:
                deviations.append(gap / se)
            else:
                deviations.append(0.0 if gap < 1e-12 else math.inf)
        worst = max(worst, *deviations)
        per_point.append(
            {
                "u": u.tolist(),
                "empirical_real": float(cos_part.mean()),
                "empirical_imag": float(sin_part.mean()),
                "target_real": target.real,
                "target_imag": target.imag,
                "z_real": deviations[0],
                "z_imag": deviations[1],
            }
        )
    p_proxy = float(2.0 * sps.norm.sf(worst)) if math.isfinite(worst) else 0.0
    return _result(name, worst, SIGMA_MULTIPLIER, p_proxy, n, grid=per_point)


def agreement(
    first: EstimateReport,
    second: EstimateReport,
    k: float = SIGMA_MULTIPLIER,
    name: str = "agreement",
) -> StatTestResult:
    """Two estimates agree when their gap is within ``k`` combined sigmas."""
    combined = math.hypot(first.std_error, second.std_error)
    gap = abs(first.estimate - second.estimate)
    statistic = gap / combined if combined > 0 else (0.0 if gap < 1e-12 else math.inf)
    p_proxy = float(2.0 * sps.norm.sf(statistic)) if math.isfinite(statistic) else 0.0
    return _result(
        name,
        statistic,
        k,
        p_proxy,
        first.n + second.n,
        first=first.estimate,
        second=second.estimate,
        combined_std_error=combined,
    )


def closeness(
    report: EstimateReport,
    target: float,
    k: float = SIGMA_MULTIPLIER,
    tolerance: float = 0.0,
    name: str = "closeness",
) -> StatTestResult:
    """``|estimate - target|`` against ``max(k * SE, tolerance)``."""
    gap = abs(report.estimate - target)
    threshold = max(k * report.std_error, tolerance, 1e-12)
    if report.std_error > 0:
        z = gap / report.std_error
    else:
        z = math.inf if gap > 0 else 0.0
    p_proxy = float(2.0 * sps.norm.sf(z)) if math.isfinite(z) else 0.0
    return _result(
        name,
        gap,
        threshold,
        p_proxy,
        report.n,
        estimate=report.estimate,
        target=target,
        std_error=report.std_error,
    )


def bound_check(
    name: str, value: float, bound: float, n: int = 0, /, **details: Any
) -> StatTestResult:
    """Passes when a diagnostic stays strictly below a fixed bound."""
    return _result(name, value, bound, math.nan, n, **details)


def relative_closeness(
    value: float, target: float, rel_tol: float, name: str = "relative_closeness", n: int = 0
) -> StatTestResult:
    gap = abs(value - target) / max(abs(target), 1e-300)
    return _result(name, gap, rel_tol, math.nan, n, value=value, target=target)


# ----------------------------------------------------------------------
# Fresh-seed retry
# ----------------------------------------------------------------------
class _HasPassed(Protocol):
    @property
    def passed(self) -> bool: ...


R = TypeVar("R", bound=_HasPassed)


def fresh_seed(seed: int, attempt: int) -> int:
    """Seed used by attempt ``attempt`` (0-based) of a retried test."""
    return (int(seed) + attempt * FRESH_SEED_STRIDE) % 2**64


def retry_with_fresh_seed(run: Callable[[int], R], seed: int) -> list[R]:
    """Runs ``run(seed)`` and, if it fails, once more with a fresh seed.

    Both attempts are returned so that reports show the failing run next
    to the retry; the verdict is the last attempt's.
    """
    attempts: list[R] = []

    def _attempt() -> R:
        current = fresh_seed(seed, len(attempts))
        outcome = run(current)
        attempts.append(outcome)
        if not outcome.passed:
            logger.warning("Attempt %d with seed %d failed", len(attempts), current)
        return outcome

    retrying = Retrying(
        stop=stop_after_attempt(2),
        retry=retry_if_result(lambda outcome: not outcome.passed),
        retry_error_callback=lambda state: state.outcome.result(),
    )
    retrying(_attempt)
    return attempts
