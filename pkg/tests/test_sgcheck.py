import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.grid import Box, CoefficientField
from stochhom.sgcheck import (KAPPA, EnumerableEnsemble, Functional, GENERIC_FUNCTIONALS, anisotropic_2d_ensemble,
                              exact_oscillation_sum, exact_variance, laminate_1d_ensemble, q_sg_constant, run_battery,
                              verify_q_sg, verify_sg, z_lattice)


def _line(n_sites, p, a=0.25):
    base = CoefficientField.scalar(Box((0.0,), (float(n_sites),)), 1.0, np.ones(n_sites))
    return EnumerableEnsemble([(k,) for k in range(n_sites)], [a, 1.0], [p, 1 - p], base)


@given(st.floats(0.01, 0.99), st.integers(1, 6))
def test_single_site_variance_oracle(p, n):
    ens = _line(n, p)
    X = Functional("first", lambda e, c: e.site_scalars(c)[:, 0])
    assert exact_variance(ens, X) == pytest.approx(p * (1 - p) * 0.75**2, rel=1e-12)
    # radius 0.5 on the unit lattice: only z = site sees the first site
    assert exact_oscillation_sum(ens, X, 0.5) == pytest.approx(0.75**2, rel=1e-12)
    assert verify_sg(ens, X, 0.5).ratio == pytest.approx(p * (1 - p), rel=1e-12)


@given(st.floats(0.01, 0.99), st.integers(1, 6))
def test_linear_functional_saturates_efron_stein(p, n):
    ens = _line(n, p)
    X = Functional("sum", lambda e, c: e.site_scalars(c).sum(axis=1))
    v = verify_sg(ens, X, 0.5)
    assert v.lhs == pytest.approx(n * p * (1 - p) * 0.75**2, rel=1e-12)
    assert v.rhs == pytest.approx(n * 0.75**2, rel=1e-12)
    assert v.passed


def test_constant_functional_has_zero_variance():
    ens = _line(3, 0.5)
    v = verify_sg(ens, Functional("const", lambda e, c: np.ones(len(c))), 0.5)
    assert v.lhs == 0.0 and v.rhs == 0.0 and v.passed


def test_q_sg_constants():
    assert q_sg_constant(1) == 1.0
    assert q_sg_constant(2) == pytest.approx(16 * KAPPA)
    with pytest.raises(ValueError):
        q_sg_constant(5)


def test_q1_lhs_is_the_variance():
    ens = anisotropic_2d_ensemble()
    X = GENERIC_FUNCTIONALS[1]
    assert verify_q_sg(ens, X, 0.5, 1).lhs == pytest.approx(exact_variance(ens, X), rel=1e-12)


def test_enumeration_guard():
    base = CoefficientField.scalar(Box((0.0,), (17.0,)), 1.0, np.ones(17))
    with pytest.raises(ValueError, match="exceed"):
        EnumerableEnsemble([(k,) for k in range(17)], [0.25, 1.0], [0.5, 0.5], base)
    with pytest.raises(ValueError):
        EnumerableEnsemble([(0,)], [0.25, 1.0], [0.5, 0.6], base)


def test_z_lattice_covers_every_site():
    ens = laminate_1d_ensemble()
    z = z_lattice(ens, 0.5)
    assert sorted(z[:, 0].tolist()) == sorted(ens.site_positions[:, 0].tolist())
    assert len(z_lattice(ens, 1.0)) == ens.n_sites + 2


def test_weights_sum_to_one():
    ens = anisotropic_2d_ensemble()
    assert ens.weights().sum() == pytest.approx(1.0, abs=1e-12)
    assert ens.configurations().shape == (2**16, 16)


def test_battery_report_shape():
    rep = run_battery(q_values=(1,))
    n_functionals = 7 + 6 + 6
    assert len(rep["verdicts"]) == 2 * n_functionals
    assert rep["all_passed"]
