import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.stats import (fit_loglog_slope, jackknife, jackknife_ci, mean, pairwise_sum, sample_variance,
                            weighted_linear_fit)

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=60))
def test_pairwise_sum_matches_fsum(values):
    import math
    assert pairwise_sum(np.array(values)) == pytest.approx(math.fsum(values), abs=1e-6)


@given(st.lists(finite, min_size=2, max_size=40))
def test_jackknife_variance_of_mean_is_s2_over_n(values):
    v = np.array(values)
    est, var = jackknife(v)
    assert est == pytest.approx(mean(v), abs=1e-6)
    assert var == pytest.approx(sample_variance(v) / len(v), rel=1e-7, abs=1e-6)


def test_jackknife_pair():
    est, var = jackknife([1.0, 3.0])
    assert est == 2.0 and var == pytest.approx(1.0)


def test_jackknife_requires_two_samples():
    with pytest.raises(ValueError):
        jackknife([1.0])


def test_ci_uses_student_t():
    _, ci = jackknife_ci([0.0, 1.0, 2.0, 3.0])
    se = np.sqrt(np.var([0, 1, 2, 3], ddof=1) / 4)
    assert ci == pytest.approx(3.182446305284263 * se, rel=1e-9)


@given(st.floats(-3.0, 3.0), st.floats(0.1, 10.0))
def test_loglog_recovers_power_law(exponent, c):
    x = np.array([2.0, 4.0, 8.0, 16.0])
    fit = fit_loglog_slope(list(zip(x, c * x**exponent)))
    assert fit.slope == pytest.approx(exponent, abs=1e-9)
    assert fit.stderr == pytest.approx(0.0, abs=1e-7)


def test_weighted_fit_downweights_noisy_point():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 2.0, 10.0])
    plain = weighted_linear_fit(x, y)
    weighted = weighted_linear_fit(x, y, sigma=[0.01, 0.01, 0.01, 100.0])
    assert abs(weighted.slope - 1.0) < abs(plain.slope - 1.0)


def test_fit_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_loglog_slope([(1.0, 1.0), (2.0, 1.0)])
    with pytest.raises(ValueError):
        fit_loglog_slope([(1.0, 1.0), (2.0, -1.0), (3.0, 1.0)])
    with pytest.raises(ValueError):
        weighted_linear_fit([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
