import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochhom.ensemble import EnsembleKind, EnsembleSpec
from stochhom.grid import CoefficientField, centered_box

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def poisson2d():
    return EnsembleSpec(EnsembleKind.POISSON, 2, contrast=0.25, inclusion_radius=1.0, intensity=1.0, master_seed=7)


@pytest.fixture
def random_field():
    """Small non-symmetric, uniformly elliptic field in d=2."""
    rng = np.random.default_rng(3)
    box = centered_box(3.0, 0.5, 2)
    n = int(round(box.edges[0] / 0.5))
    cells = np.empty((n, n, 2, 2))
    diag = rng.uniform(0.5, 0.9, size=(n, n, 2))
    skew = rng.uniform(-0.1, 0.1, size=(n, n))
    cells[..., 0, 0], cells[..., 1, 1] = diag[..., 0], diag[..., 1]
    cells[..., 0, 1], cells[..., 1, 0] = skew, -skew
    return CoefficientField(box, 0.5, cells)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
