"""Unit tests for duration-distribution fitting and moment matching.

Reference values below were computed with an independent oracle:
normal quantiles by bisection on the math.erf-based CDF, moments from
the closed forms cross-checked by Monte Carlo.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orsched.distributions import (
    Fit,
    LogNormalParams,
    aic_better_fit,
    fenton_wilkinson_sum,
    fit_type_params,
    inv_norm_cdf,
    lognormal_from_moments,
    lognormal_percentile,
    moments_from_lognormal,
)

# Bisection on 0.5*(1+erf(x/sqrt(2))), 200 iterations.
Z_085 = 1.036433389494
Z_0975 = 1.959963984540


def test_inv_norm_cdf_frozen_values():
    assert inv_norm_cdf(0.85) == pytest.approx(Z_085, abs=1e-9)
    assert inv_norm_cdf(0.975) == pytest.approx(Z_0975, abs=1e-9)
    assert inv_norm_cdf(0.5) == pytest.approx(0.0, abs=1e-12)


def test_inv_norm_cdf_symmetry_and_domain():
    for p in (0.01, 0.15, 0.3, 0.49):
        assert inv_norm_cdf(p) == pytest.approx(-inv_norm_cdf(1.0 - p), abs=1e-10)
    for bad in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError):
            inv_norm_cdf(bad)


def test_inv_norm_cdf_accepts_arrays():
    out = inv_norm_cdf(np.array([0.15, 0.5, 0.85]))
    assert out.shape == (3,)
    assert out[0] == pytest.approx(-Z_085, abs=1e-9)


def test_moments_of_standard_lognormal():
    m = moments_from_lognormal(LogNormalParams(mu=0.0, sigma2=1.0))
    assert m.mean == pytest.approx(math.exp(0.5), rel=1e-12)
    assert m.variance == pytest.approx((math.e - 1.0) * math.e, rel=1e-12)


def test_zero_variance_collapses_to_point_mass():
    m = moments_from_lognormal(LogNormalParams(mu=math.log(120.0), sigma2=0.0))
    assert m.mean == pytest.approx(120.0, rel=1e-12)
    assert m.variance == 0.0


def test_lognormal_from_moments_rejects_bad_input():
    with pytest.raises(ValueError):
        lognormal_from_moments(0.0, 1.0)
    with pytest.raises(ValueError):
        lognormal_from_moments(-3.0, 1.0)
    with pytest.raises(ValueError):
        lognormal_from_moments(10.0, -1.0)


@given(
    mu=st.floats(min_value=-5.0, max_value=10.0),
    sigma2=st.floats(min_value=0.0, max_value=4.0),
)
@settings(max_examples=300, deadline=None)
def test_moment_round_trip(mu, sigma2):
    # lognormal_from_moments(moments_from_lognormal(p)) == p within 1e-9 rel
    m = moments_from_lognormal(LogNormalParams(mu=mu, sigma2=sigma2))
    back = lognormal_from_moments(m.mean, m.variance)
    assert back.mu == pytest.approx(mu, rel=1e-9, abs=1e-9)
    assert back.sigma2 == pytest.approx(sigma2, rel=1e-9, abs=1e-9)


def test_fenton_wilkinson_matches_sum_moments():
    parts = [
        LogNormalParams(mu=4.2, sigma2=0.3),
        LogNormalParams(mu=4.8, sigma2=0.1),
        LogNormalParams(mu=3.9, sigma2=0.0),
    ]
    exact_mean = sum(moments_from_lognormal(p).mean for p in parts)
    exact_var = sum(moments_from_lognormal(p).variance for p in parts)
    fw = fenton_wilkinson_sum(parts)
    m = moments_from_lognormal(fw)
    assert m.mean == pytest.approx(exact_mean, rel=1e-12)
    assert m.variance == pytest.approx(exact_var, rel=1e-12)


def test_fenton_wilkinson_single_part_is_identity():
    p = LogNormalParams(mu=4.5, sigma2=0.2)
    fw = fenton_wilkinson_sum([p])
    assert fw.mu == pytest.approx(p.mu, rel=1e-12)
    assert fw.sigma2 == pytest.approx(p.sigma2, rel=1e-12)


def test_fenton_wilkinson_empty_sum_rejected():
    with pytest.raises(ValueError):
        fenton_wilkinson_sum([])


def test_percentile_frozen_value():
    # P85 of LN(0,1) = exp(z_0.85) = 2.819144273 (erf-bisection oracle)
    p85 = lognormal_percentile(LogNormalParams(mu=0.0, sigma2=1.0), 0.85)
    assert p85 == pytest.approx(2.819144273, abs=1e-8)


def test_percentile_monotone_in_level():
    params = LogNormalParams(mu=5.0, sigma2=0.4)
    levels = [0.1, 0.3, 0.5, 0.7, 0.85, 0.99]
    vals = [lognormal_percentile(params, lv) for lv in levels]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    # median of a lognormal is exp(mu)
    assert lognormal_percentile(params, 0.5) == pytest.approx(math.exp(5.0), rel=1e-10)


def test_fit_type_params_population_variance():
    sample_mean, normal, lognormal = fit_type_params([100.0, 200.0])
    assert sample_mean == pytest.approx(150.0)
    assert normal.mu == pytest.approx(150.0)
    assert normal.sigma2 == pytest.approx(2500.0)  # divide-by-n, not n-1
    assert lognormal.mu == pytest.approx(0.5 * (math.log(100.0) + math.log(200.0)))
    assert lognormal.sigma2 == pytest.approx(0.120113253, abs=1e-8)


def test_fit_type_params_singleton_and_errors():
    sample_mean, normal, lognormal = fit_type_params([90.0])
    assert sample_mean == 90.0
    assert normal.sigma2 == 0.0
    assert lognormal.sigma2 == 0.0
    with pytest.raises(ValueError):
        fit_type_params([])
    with pytest.raises(ValueError):
        fit_type_params([10.0, -5.0])


def test_aic_prefers_generating_family():
    rng = np.random.default_rng(7)
    skewed = np.exp(rng.normal(4.0, 0.8, size=400))
    assert aic_better_fit(skewed) is Fit.LOGNORMAL
    # CoV must be large enough for the families to be distinguishable
    symmetric = np.random.default_rng(3).normal(300.0, 60.0, size=400)
    assert np.all(symmetric > 0)
    assert aic_better_fit(symmetric) is Fit.NORMAL


def test_aic_small_and_degenerate_samples():
    assert aic_better_fit([100.0, 110.0, 120.0, 130.0]) is None
    assert aic_better_fit([100.0] * 10) is Fit.NORMAL
