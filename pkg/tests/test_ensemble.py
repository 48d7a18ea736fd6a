import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.ensemble import (EnsembleKind, EnsembleSpec, empirical_stationarity_check, evaluate_field,
                               realize_field, sample_poisson_points)
from stochhom.grid import Box, centered_box


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(EnsembleKind.POISSON, 4)
    with pytest.raises(ValueError):
        EnsembleSpec(EnsembleKind.POISSON, 2, contrast=0.0)
    with pytest.raises(ValueError):
        EnsembleSpec(EnsembleKind.CHECKERBOARD, 2, cell_values=(0.5, 1.0), probabilities=(0.3, 0.3))
    with pytest.raises(ValueError):
        # eigenvalue 2 > 1 violates boundedness
        EnsembleSpec(EnsembleKind.CONSTANT, 2, cell_values=([[2.0, 0.0], [0.0, 1.0]],))


def test_spec_dict_round_trip():
    spec = EnsembleSpec(EnsembleKind.CHECKERBOARD, 2, contrast=0.25,
                        cell_values=([[0.25, 0.0], [0.0, 1.0]], 1.0), probabilities=(0.4, 0.6), master_seed=11)
    assert EnsembleSpec.from_dict(spec.to_dict()) == spec


@given(st.integers(0, 1000), st.integers(0, 2**32))
def test_poisson_field_is_elliptic(k, seed):
    spec = EnsembleSpec(EnsembleKind.POISSON, 2, contrast=0.25, master_seed=seed)
    field = realize_field(spec, centered_box(4.0, 0.5, 2), 0.5, k)
    field.check_ellipticity(0.25)
    assert set(np.unique(field.cells[..., 0, 0])) <= {0.25, 1.0}


def test_seed_determinism(poisson2d):
    box = centered_box(6.0, 0.25, 2)
    a = realize_field(poisson2d, box, 0.25, 3)
    b = realize_field(poisson2d, box, 0.25, 3)
    c = realize_field(poisson2d, box, 0.25, 4)
    d = realize_field(poisson2d.with_seed(8), box, 0.25, 3)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert a.digest() != d.digest()


def test_realisation_does_not_depend_on_the_box(poisson2d):
    small = realize_field(poisson2d, centered_box(3.0, 0.25, 2), 0.25, 5)
    large = realize_field(poisson2d, centered_box(9.0, 0.25, 2), 0.25, 5)
    off = (large.shape[0] - small.shape[0]) // 2
    inner = large.cells[off:off + small.shape[0], off:off + small.shape[1]]
    assert np.array_equal(inner, small.cells)


def test_poisson_points_density():
    spec = EnsembleSpec(EnsembleKind.POISSON, 2, intensity=1.0)
    box = Box((0.0, 0.0), (40.0, 40.0))
    counts = [len(sample_poisson_points(spec, box, k)) for k in range(5)]
    ext_area = 42.0 ** 2
    assert abs(np.mean(counts) / ext_area - 1.0) < 0.05


def test_spacing_must_resolve_inclusions(poisson2d):
    with pytest.raises(ValueError):
        realize_field(poisson2d, centered_box(2.0, 1.0, 2), 1.0, 0)


def test_laminate_bands():
    spec = EnsembleSpec(EnsembleKind.LAMINATE, 2, contrast=0.25, band_width=0.5)
    vals = evaluate_field(spec, np.array([[0.1, 3.0], [0.6, -2.0], [1.1, 0.0]]), 0)
    assert vals[:, 0, 0].tolist() == [0.25, 1.0, 0.25]


def test_checkerboard_constant_on_unit_cells():
    spec = EnsembleSpec(EnsembleKind.CHECKERBOARD, 2, cell_values=(0.25, 1.0), master_seed=2)
    field = realize_field(spec, Box((0.0, 0.0), (4.0, 4.0)), 0.25, 0)
    a = field.cells[..., 0, 0].reshape(4, 4, 4, 4)
    assert np.all(a == a[:, :1, :, :1])


def test_stationarity_check(poisson2d):
    rep = empirical_stationarity_check(poisson2d, 200, (5, -3))
    assert rep.passed
    with pytest.raises(ValueError):
        empirical_stationarity_check(poisson2d, 50, (1, 0))
    with pytest.raises(ValueError):
        empirical_stationarity_check(poisson2d, 200, (0.5, 0))
