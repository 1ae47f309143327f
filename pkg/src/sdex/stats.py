"""Sample moments, Kolmogorov-Smirnov distances, and a trend regression.

Central moments use the biased (population) estimators throughout so large-n
comparisons against analytic values are reproducible without bias-correction
bookkeeping.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .errors import DegenerateDataError, UsageError

# Sampling std of the excess kurtosis of n unit-normal draws, ~0.2 at n=500.
def kurtosis_sampling_std(n: int) -> float:
    return float(np.sqrt(24.0 / n))


@dataclass(frozen=True)
class MomentStats:
    n: int
    mean: float
    std: float
    skew: float
    excess_kurtosis: float


def moments(xs: np.ndarray) -> MomentStats:
    """Mean, std, skew and excess kurtosis (kurtosis minus the gaussian 3)."""
    xs = np.asarray(xs, dtype=float).ravel()
    n = xs.size
    if n < 4:
        raise UsageError(f"need at least 4 values for moments, got {n}")
    mean = xs.mean()
    c = xs - mean
    m2 = np.mean(c ** 2)
    if m2 == 0.0:
        raise DegenerateDataError("all values identical; moments undefined")
    m3 = np.mean(c ** 3)
    m4 = np.mean(c ** 4)
    return MomentStats(
        n=n,
        mean=float(mean),
        std=float(np.sqrt(m2)),
        skew=float(m3 / m2 ** 1.5),
        excess_kurtosis=float(m4 / m2 ** 2 - 3.0),
    )


def ks_statistic(xs: np.ndarray, cdf=None, ys: np.ndarray | None = None) -> float:
    """Kolmogorov-Smirnov sup distance, one-sample (against `cdf`) or
    two-sample (against `ys`)."""
    if (cdf is None) == (ys is None):
        raise UsageError("pass exactly one of cdf or ys")
    xs = np.sort(np.asarray(xs, dtype=float).ravel())
    n = xs.size
    if n == 0:
        raise UsageError("empty sample")
    if cdf is not None:
        f = np.asarray(cdf(xs), dtype=float)
        grid = np.arange(1, n + 1) / n
        return float(max(np.max(grid - f), np.max(f - (grid - 1.0 / n))))
    ys = np.sort(np.asarray(ys, dtype=float).ravel())
    m = ys.size
    if m == 0:
        raise UsageError("empty sample")
    both = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, both, side="right") / n
    cdf_y = np.searchsorted(ys, both, side="right") / m
    return float(np.max(np.abs(cdf_x - cdf_y)))


@dataclass(frozen=True)
class TrendResult:
    slope: float
    ci_low: float
    ci_high: float

    def contains_zero(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


def trend_slope(xs: np.ndarray, ys: np.ndarray) -> TrendResult:
    """Ordinary least-squares slope with its 95% confidence interval."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    n = xs.size
    if n != ys.size:
        raise UsageError("xs and ys must have equal length")
    if n < 3:
        raise UsageError(f"need at least 3 points for a trend, got {n}")
    sxx = np.sum((xs - xs.mean()) ** 2)
    if sxx == 0.0:
        raise UsageError("x values are degenerate (zero variance)")
    slope = float(np.sum((xs - xs.mean()) * (ys - ys.mean())) / sxx)
    intercept = ys.mean() - slope * xs.mean()
    resid = ys - (intercept + slope * xs)
    s2 = float(np.sum(resid ** 2) / (n - 2)) if n > 2 else 0.0
    se = np.sqrt(s2 / sxx)
    half = float(student_t.ppf(0.975, n - 2) * se)
    return TrendResult(slope=slope, ci_low=slope - half, ci_high=slope + half)
