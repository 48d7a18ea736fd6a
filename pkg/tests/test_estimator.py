import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.estimator import (EnergyEstimate, estimate_A_T, energy_estimate, moments_from_values, read_csv,
                                richardson_extrapolate, richardson_weights, write_csv)
from stochhom.grid import CoefficientField, centered_box, make_mask
from stochhom.solver import OperatorSpec, solve_adjoint_corrector, solve_modified_corrector


def _estimate(field, T, L, xi, xp, strict=True):
    op = OperatorSpec(field, T)
    phi = solve_modified_corrector(op, xi, tol=1e-11)
    adj = solve_adjoint_corrector(op, xp, tol=1e-11)
    return energy_estimate(phi, adj, make_mask(field.box, field.spacing, L), strict=strict)


@pytest.mark.parametrize("xi,xp", [((1.0, 0.0), (1.0, 0.0)), ((1.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0))])
def test_constant_field_reproduces_the_tensor(xi, xp):
    A0 = np.array([[0.6, 0.15], [-0.05, 0.8]])
    field = CoefficientField.constant(centered_box(6.0, 0.5, 2), 0.5, A0)
    est = _estimate(field, 4.0, 2.0, xi, xp)
    assert est.value_with_zero_order == pytest.approx(np.dot(xp, A0 @ np.array(xi)), abs=1e-10)


def test_strict_geometry_guard():
    field = CoefficientField.constant(centered_box(4.0, 0.5, 2), 0.5, np.eye(2))
    with pytest.raises(ValueError):
        _estimate(field, 16.0, 2.0, (1.0, 0.0), (1.0, 0.0))
    _estimate(field, 16.0, 2.0, (1.0, 0.0), (1.0, 0.0), strict=False)


def test_unit_direction_required():
    field = CoefficientField.constant(centered_box(4.0, 0.5, 2), 0.5, np.eye(2))
    with pytest.raises(ValueError):
        solve_modified_corrector(OperatorSpec(field, 4.0), (1.0, 1.0))


def test_csv_round_trip():
    rows = [EnergyEstimate((1.0, 0.0), (0.0, 1.0), 16.0, 8.0, 20.0, 0.3 + k, 0.29 + k, 0.01, k, 5) for k in range(3)]
    back = read_csv(write_csv(rows))
    assert back == rows
    assert back[0].zero_order_raw == pytest.approx(0.16)


def test_estimate_A_T_rejects_mixed_cells():
    a = EnergyEstimate((1.0, 0.0), (1.0, 0.0), 16.0, 8.0, 20.0, 0.3, 0.29, 0.01)
    b = EnergyEstimate((1.0, 0.0), (1.0, 0.0), 32.0, 8.0, 20.0, 0.3, 0.29, 0.01)
    with pytest.raises(ValueError):
        estimate_A_T([a, b])
    est = estimate_A_T([a, a, a])
    assert est.value == pytest.approx(0.29) and est.ci_halfwidth == pytest.approx(0.0)


@given(st.floats(-1.0, 1.0), st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
def test_richardson_cancels_inverse_powers(a_inf, c1, c2):
    Ts = [16.0, 32.0, 64.0, 128.0]
    vals = [(T, a_inf + c1 / T + c2 / T**2) for T in Ts]
    assert richardson_extrapolate(vals, 2).value == pytest.approx(a_inf, abs=1e-10)


def test_richardson_weights_sum_to_one():
    w = richardson_weights([8, 16, 32, 64], 2)
    assert w.sum() == pytest.approx(1.0) and w[0] == 0.0
    with pytest.raises(ValueError):
        richardson_weights([8, 16, 40], 1)


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=30))
def test_power_means_monotone_in_q(values):
    v = np.array(values)
    ms = [moments_from_values(v, v**2, q, 1.0) for q in (1.0, 2.0, 4.0)]
    for a, b in zip(ms, ms[1:]):
        assert a.moment_phi <= b.moment_phi * (1 + 1e-12)
        assert a.moment_grad <= b.moment_grad * (1 + 1e-12)


def test_moments_reject_q_below_one():
    with pytest.raises(ValueError):
        moments_from_values([1.0], [1.0], 0.5, 1.0)
