"""Duration distributions: fitting, moment matching and percentiles.

Surgery durations are modelled per surgery type either as Normal or
Lognormal. The lognormal route is the interesting one: sums of lognormal
durations are approximated by a single lognormal with matched first and
second moments (Fenton-Wilkinson), which gives closed-form percentiles
for the total duration assigned to an OR/day.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special


@dataclass(frozen=True)
class NormalParams:
    """Normal distribution: mean and variance (both in minutes / minutes^2)."""

    mu: float
    sigma2: float


@dataclass(frozen=True)
class LogNormalParams:
    """Lognormal distribution: mean and variance of the underlying log."""

    mu: float
    sigma2: float


@dataclass(frozen=True)
class Moments:
    """First moment and central second moment of a positive random variable."""

    mean: float
    variance: float


class Fit(Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"


def inv_norm_cdf(level):
    """Inverse standard normal CDF (quantile function).

    Accepts scalars or arrays; level must lie strictly inside (0, 1).
    """
    arr = np.asarray(level, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"quantile level must be in (0, 1), got {level!r}")
    out = special.ndtri(arr)
    if np.ndim(level) == 0:
        return float(out)
    return out


def moments_from_lognormal(params: LogNormalParams) -> Moments:
    """Mean and variance of LN(mu, sigma2).

    E = exp(mu + sigma2/2), Var = (exp(sigma2) - 1) * E^2.
    """
    if params.sigma2 < 0.0:
        raise ValueError(f"sigma2 must be nonnegative, got {params.sigma2}")
    mean = math.exp(params.mu + params.sigma2 / 2.0)
    variance = math.expm1(params.sigma2) * mean * mean
    return Moments(mean=mean, variance=variance)


def lognormal_from_moments(mean, variance) -> LogNormalParams:
    """Lognormal parameters whose distribution has the given mean/variance.

    Inverts the moment map: sigma2 = ln(Var/E^2 + 1), mu = ln E - sigma2/2.
    """
    if mean <= 0.0:
        raise ValueError(f"mean must be positive, got {mean}")
    if variance < 0.0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    sigma2 = math.log1p(variance / (mean * mean))
    mu = math.log(mean) - sigma2 / 2.0
    return LogNormalParams(mu=mu, sigma2=sigma2)


def fenton_wilkinson_sum(parts: list[LogNormalParams]) -> LogNormalParams:
    """Single-lognormal approximation of a sum of independent lognormals.

    Matches the exact mean and variance of the sum; the resulting
    parameters reproduce those two moments to machine precision.
    """
    if not parts:
        raise ValueError("cannot approximate an empty sum")
    total_mean = 0.0
    total_var = 0.0
    for p in parts:
        m = moments_from_lognormal(p)
        total_mean += m.mean
        total_var += m.variance
    return lognormal_from_moments(total_mean, total_var)


def lognormal_percentile(params: LogNormalParams, level: float) -> float:
    """level-quantile of LN(mu, sigma2): exp(mu + sqrt(sigma2) * z_level)."""
    z = inv_norm_cdf(level)
    return math.exp(params.mu + math.sqrt(params.sigma2) * z)


def fit_type_params(durations) -> tuple[float, NormalParams, LogNormalParams]:
    """Fit Normal and Lognormal parameters to observed durations.

    Uses maximum likelihood throughout, i.e. population (divide-by-n)
    variances. Returns (sample_mean, NormalParams, LogNormalParams);
    a single observation yields zero variance for both families.
    """
    x = np.asarray(durations, dtype=float)
    if x.size == 0:
        raise ValueError("no durations to fit")
    if np.any(x <= 0.0):
        raise ValueError("durations must be strictly positive")
    sample_mean = float(np.mean(x))
    normal = NormalParams(mu=sample_mean, sigma2=float(np.var(x)))
    logs = np.log(x)
    lognormal = LogNormalParams(mu=float(np.mean(logs)), sigma2=float(np.var(logs)))
    return sample_mean, normal, lognormal


def aic_better_fit(durations) -> Fit | None:
    """Pick Normal vs Lognormal by AIC (two parameters each).

    Returns None when fewer than 5 observations are available; ties and
    degenerate (constant) samples go to Normal.
    """
    x = np.asarray(durations, dtype=float)
    if x.size < 5:
        return None
    if np.any(x <= 0.0):
        raise ValueError("durations must be strictly positive")
    n = x.size
    var_n = float(np.var(x))
    logs = np.log(x)
    var_ln = float(np.var(logs))
    if var_n <= 0.0 or var_ln <= 0.0:
        return Fit.NORMAL
    # ln L at the MLE collapses to -n/2 * (ln(2*pi*var) + 1), plus the
    # log-Jacobian term sum(ln x) for the lognormal family.
    ll_normal = -0.5 * n * (math.log(2.0 * math.pi * var_n) + 1.0)
    ll_lognormal = -0.5 * n * (math.log(2.0 * math.pi * var_ln) + 1.0) - float(np.sum(logs))
    aic_normal = 4.0 - 2.0 * ll_normal
    aic_lognormal = 4.0 - 2.0 * ll_lognormal
    if aic_lognormal < aic_normal:
        return Fit.LOGNORMAL
    return Fit.NORMAL
