"""Exact verification of the spectral gap inequality on tiny enumerable ensembles.

All expectations are exact sums over every configuration (no sampling).  The
continuum ``z``-integral of the oscillation is replaced by a sum over the site
lattice times the lattice cell volume.  Measurability questions about the
oscillation do not arise for finite ensembles.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import stats
from .ensemble import EnsembleSpec, realize_field
from .grid import Box, CoefficientField, cell_centers, centered_box, make_mask
from .solver import OperatorSpec, solve_modified_corrector

MAX_CONFIGURATIONS = 2 ** 16
# Moment constant of the exponential Efron-Stein inequality for functions of
# independent variables: kappa = sqrt(e) / (2 (sqrt(e) - 1)).
KAPPA = np.sqrt(np.e) / (2 * (np.sqrt(np.e) - 1))


def q_sg_constant(q: int) -> float:
    """Constant ``C(q)`` accepted by :func:`verify_q_sg` for iid site ensembles.

    ``q = 1`` is the spectral gap inequality itself (``C = 1/rho = 1``); for
    ``q >= 2`` the two-sided moment version of the Efron-Stein inequality gives
    ``||X - <X>||_{2q}^2 <= 4 kappa q ||V||_q``, and we record the conservative
    ``8 kappa q``.
    """
    if q not in (1, 2, 3):
        raise ValueError("q must be 1, 2 or 3")
    return 1.0 if q == 1 else 8 * KAPPA * q


@dataclass(eq=False)
class EnumerableEnsemble:
    """Independent sites drawing from a finite tensor set; everything else is fixed.

    ``site_positions`` default to the centres of the site cells; the lattice
    spacing ``site_spacing`` defines both the ``z`` lattice and its cell volume.
    """

    sites: list
    values_per_site: list
    probabilities: list
    base_field: CoefficientField
    site_spacing: float = 1.0
    name: str = "ensemble"
    site_positions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        d = self.base_field.dimension
        self.sites = [tuple(int(k) for k in s) for s in self.sites]
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("sites must be distinct")
        for s in self.sites:
            if len(s) != d or any(not 0 <= k < n for k, n in zip(s, self.base_field.shape)):
                raise ValueError(f"site {s} outside the grid")
        vals = []
        for v in self.values_per_site:
            a = np.asarray(v, dtype=float)
            vals.append(a * np.eye(d) if a.ndim == 0 else a.reshape(d, d))
        self.values_per_site = vals
        if not 1 <= len(vals) <= 3:
            raise ValueError("values_per_site must have 1 to 3 entries")
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (len(vals),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1 per site")
        self.probabilities = p
        if self.n_configurations > MAX_CONFIGURATIONS:
            raise ValueError(f"{self.n_configurations} configurations exceed the enumeration bound {MAX_CONFIGURATIONS}")
        if self.site_positions is None:
            coords = cell_centers(self.base_field.box, self.base_field.spacing)
            self.site_positions = np.array([[coords[i][k] for i, k in enumerate(s)] for s in self.sites])
        else:
            self.site_positions = np.asarray(self.site_positions, dtype=float).reshape(len(self.sites), d)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_values(self) -> int:
        return len(self.values_per_site)

    @property
    def n_configurations(self) -> int:
        return self.n_values ** self.n_sites

    def configurations(self) -> np.ndarray:
        """All value-index tuples in C order, shape ``(n_configurations, n_sites)``."""
        return np.array(list(itertools.product(range(self.n_values), repeat=self.n_sites)), dtype=int).reshape(
            self.n_configurations, self.n_sites)

    def weights(self) -> np.ndarray:
        configs = self.configurations()
        return np.prod(self.probabilities[configs], axis=1)

    def site_scalars(self, configs: np.ndarray) -> np.ndarray:
        """``A_11`` of each site for every configuration."""
        a11 = np.array([v[0, 0] for v in self.values_per_site])
        return a11[configs]

    def field(self, config: Sequence[int]) -> CoefficientField:
        cells = self.base_field.cells.copy()
        for s, k in zip(self.sites, config):
            cells[s] = self.values_per_site[k]
        return CoefficientField(self.base_field.box, self.base_field.spacing, cells)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sites": [list(s) for s in self.sites],
            "values_per_site": [v.tolist() for v in self.values_per_site],
            "probabilities": self.probabilities.tolist(),
            "site_spacing": self.site_spacing,
            "n_configurations": self.n_configurations,
        }


@dataclass(frozen=True)
class Functional:
    """``fn(ensemble, configs) -> values`` evaluated on a batch of configurations."""

    name: str
    fn: Callable[[EnumerableEnsemble, np.ndarray], np.ndarray]
    n_solves_per_config: int = 0


def _table(ens: EnumerableEnsemble, X) -> np.ndarray:
    """Values of ``X`` on every configuration, reshaped to one axis per site."""
    if isinstance(X, np.ndarray):
        vals = np.asarray(X, dtype=float).ravel()
    else:
        fn = X.fn if isinstance(X, Functional) else X
        vals = np.asarray(fn(ens, ens.configurations()), dtype=float).ravel()
    if vals.size != ens.n_configurations:
        raise ValueError("functional returned the wrong number of values")
    return vals.reshape((ens.n_values,) * ens.n_sites)


def _expect(ens: EnumerableEnsemble, values: np.ndarray) -> float:
    return stats.pairwise_sum(ens.weights() * np.asarray(values).ravel())


def exact_variance(ens: EnumerableEnsemble, X) -> float:
    vals = _table(ens, X)
    m = _expect(ens, vals)
    return max(_expect(ens, (vals - m) ** 2), 0.0)


def z_lattice(ens: EnumerableEnsemble, radius: float) -> np.ndarray:
    """Lattice points (site lattice) whose closed ball of ``radius`` contains at least one site."""
    a = ens.site_spacing
    origin = ens.site_positions[0]
    rel = (ens.site_positions - origin) / a
    lo = np.floor(rel.min(axis=0) - radius / a) - 1
    hi = np.ceil(rel.max(axis=0) + radius / a) + 1
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes)) * a + origin
    keep = [p for p in pts if np.any(np.linalg.norm(ens.site_positions - p, axis=1) <= radius + 1e-12)]
    return np.array(keep).reshape(-1, ens.site_positions.shape[1])


def _oscillations(ens: EnumerableEnsemble, vals: np.ndarray, radius: float):
    """Yield ``osc_{A|B_r(z)} X`` tables (broadcast to full shape) for every lattice ``z``."""
    for z in z_lattice(ens, radius):
        inside = tuple(int(k) for k in np.nonzero(np.linalg.norm(ens.site_positions - z, axis=1) <= radius + 1e-12)[0])
        osc = vals.max(axis=inside, keepdims=True) - vals.min(axis=inside, keepdims=True)
        yield np.broadcast_to(osc, vals.shape)


def oscillation_field(ens: EnumerableEnsemble, X, radius: float) -> np.ndarray:
    """Per-configuration ``sum_z (osc_{A|B_r(z)} X)^2 * a^d``."""
    vals = _table(ens, X)
    vol = ens.site_spacing ** ens.base_field.dimension
    total = np.zeros(vals.shape)
    for osc in _oscillations(ens, vals, radius):
        total = total + osc ** 2
    return total * vol


def exact_oscillation_sum(ens: EnumerableEnsemble, X, radius: float) -> float:
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    return _expect(ens, oscillation_field(ens, X, radius))


@dataclass
class SGVerdict:
    functional: str
    ensemble: str
    lhs: float
    rhs: float
    ratio: float
    bound: float
    passed: bool
    n_configurations: int
    radius: float
    q: int = 1

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs <= 1e-300 else float("inf")


def _name(X) -> str:
    return X.name if isinstance(X, Functional) else getattr(X, "__name__", "X")


def verify_sg(ens: EnumerableEnsemble, X, radius: float, rho: float = 1.0) -> SGVerdict:
    """``Var X <= rho^-1 sum_z <(osc_{B_r(z)} X)^2>`` by exact enumeration."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    vals = _table(ens, X)
    lhs = exact_variance(ens, vals.ravel())
    rhs = exact_oscillation_sum(ens, vals.ravel(), radius)
    slack = 1e-12 * max(abs(lhs), abs(rhs), 1e-300)
    return SGVerdict(_name(X), ens.name, lhs, rhs, _ratio(lhs, rhs), 1.0 / rho, bool(lhs <= rhs / rho + slack),
                     ens.n_configurations, radius)


def verify_q_sg(ens: EnumerableEnsemble, X, radius: float, q: int) -> SGVerdict:
    """``<(X - <X>)^{2q}>^{1/q} <= C(q) <(sum_z osc_{B_{2r}(z)} X^2)^q>^{1/q}`` exactly."""
    bound = q_sg_constant(q)
    vals = _table(ens, X)
    m = _expect(ens, vals)
    lhs = max(_expect(ens, (vals - m) ** (2 * q)), 0.0) ** (1.0 / q)
    V = oscillation_field(ens, vals.ravel(), 2 * radius)
    rhs = _expect(ens, V ** q) ** (1.0 / q)
    slack = 1e-12 * max(abs(lhs), abs(rhs), 1e-300)
    ratio = _ratio(lhs, rhs)
    return SGVerdict(_name(X), ens.name, lhs, rhs, ratio, bound, bool(lhs <= bound * rhs + slack),
                     ens.n_configurations, 2 * radius, q)


# ---------------------------------------------------------------------------
# ergodic averages of local functionals
# ---------------------------------------------------------------------------


@dataclass
class ErgodicTable:
    radii: list
    variance: list
    variance_ci: list
    mean: list
    mean_ci: list
    slope: float
    slope_stderr: float
    n_samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _a11(field_: CoefficientField) -> np.ndarray:
    return field_.cells[..., 0, 0]


def ergodic_average_probe(spec: EnsembleSpec, X_local: Callable[[CoefficientField], np.ndarray] | None = None,
                          radii: Sequence[float] = (4, 8, 16, 32), n_samples: int = 200,
                          spacing: float = 0.25, first_sample: int = 0) -> ErgodicTable:
    """Variance over samples of the spatial average of ``X_local`` over ``B_R``.

    ``X_local`` maps a field to a cell array depending on ``A`` in a ball of
    radius at most 2 (default: ``A_11`` of the cell).  One realisation on the
    largest box serves every radius.
    """
    X_local = X_local or _a11
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    box = centered_box(radii[-1] + spacing, spacing, spec.dimension)
    dist = np.sqrt(sum(c ** 2 for c in np.meshgrid(*cell_centers(box, spacing), indexing="ij")))
    masks = [dist < r for r in radii]
    avgs = np.empty((n_samples, radii.size))
    for k in range(n_samples):
        vals = X_local(realize_field(spec, box, spacing, first_sample + k))
        for j, m in enumerate(masks):
            avgs[k, j] = stats.mean(vals[m])
    var, var_ci, mean, mean_ci = [], [], [], []
    for j in range(radii.size):
        v, vc = stats.variance_with_ci(avgs[:, j])
        mu, mc = stats.jackknife_ci(avgs[:, j])
        var.append(v)
        var_ci.append(vc)
        mean.append(mu)
        mean_ci.append(mc)
    if all(v > 0 for v in var) and radii.size >= 3:
        fit = stats.fit_loglog_slope(list(zip(radii, var, var_ci)))
        slope, se = fit.slope, fit.stderr
    else:
        slope, se = float("nan"), float("nan")
    return ErgodicTable(radii.tolist(), var, var_ci, mean, mean_ci, slope, se, n_samples)


# ---------------------------------------------------------------------------
# bundled battery
# ---------------------------------------------------------------------------


def _site_value(ens, configs):
    return ens.site_scalars(configs)[:, 0]


def _site_sum(ens, configs):
    return ens.site_scalars(configs).sum(axis=1)


def _pair_product(ens, configs):
    s = ens.site_scalars(configs)
    return s[:, 0] * s[:, -1]


def _site_max(ens, configs):
    return ens.site_scalars(configs).max(axis=1)


def _harmonic_mean(ens, configs):
    return 1.0 / np.mean(1.0 / ens.site_scalars(configs), axis=1)


def _squared_deviation(ens, configs):
    s = ens.site_scalars(configs)
    return (s.mean(axis=1) - s[:, 0]) ** 2


GENERIC_FUNCTIONALS = [
    Functional("site_value", _site_value),
    Functional("site_sum", _site_sum),
    Functional("pair_product", _pair_product),
    Functional("site_max", _site_max),
    Functional("harmonic_mean", _harmonic_mean),
    Functional("squared_deviation", _squared_deviation),
]


def laminate_1d_ensemble(contrast: float = 0.25) -> EnumerableEnsemble:
    """1-D field of 8 unit cells on ``[-4, 4]``; the four central cells are binary sites."""
    box = Box((-4.0,), (4.0,))
    base = CoefficientField.scalar(box, 1.0, np.ones(8))
    return EnumerableEnsemble([(2,), (3,), (4,), (5,)], [contrast, 1.0], [0.5, 0.5], base, 1.0, "binary_1d")


def ternary_2d_ensemble(contrast: float = 0.25) -> EnumerableEnsemble:
    """3x3 ternary sites with unequal probabilities on a 5x5 grid of unit cells."""
    box = Box((-2.5, -2.5), (2.5, 2.5))
    base = CoefficientField.scalar(box, 1.0, np.ones((5, 5)))
    sites = [(i, j) for i in range(1, 4) for j in range(1, 4)]
    return EnumerableEnsemble(sites, [contrast, 0.5 * (1 + contrast), 1.0], [0.2, 0.3, 0.5], base, 1.0, "ternary_2d")


def anisotropic_2d_ensemble(contrast: float = 0.25) -> EnumerableEnsemble:
    """4x4 binary sites with diagonal anisotropic values and biased coin."""
    box = Box((-2.0, -2.0), (2.0, 2.0))
    base = CoefficientField.scalar(box, 1.0, np.ones((4, 4)))
    sites = [(i, j) for i in range(4) for j in range(4)]
    values = [np.diag([contrast, 1.0]), np.diag([1.0, 0.5])]
    return EnumerableEnsemble(sites, values, [0.3, 0.7], base, 1.0, "anisotropic_2d")


def energy_functional_1d(T: float = 4.0, mask_radius: float = 3.5) -> Functional:
    """``A~_{T,L}`` (direction ``e_1``) of the 1-D ensemble; one tiny direct solve per configuration."""
    from .estimator import energy_estimate

    def fn(ens, configs):
        mask = make_mask(ens.base_field.box, ens.base_field.spacing, mask_radius)
        out = []
        for c in configs:
            sol = solve_modified_corrector(OperatorSpec(ens.field(c), T), [1.0], tol=1e-12, method="direct")
            out.append(energy_estimate(sol, sol, mask, strict=False).value_without_zero_order)
        return np.array(out)

    return Functional("energy_estimate_1d", fn, 1)


def bundled_battery() -> list[tuple[EnumerableEnsemble, list[Functional]]]:
    """Six generic functionals on three ensembles, plus the solve-based estimator on the 1-D one."""
    one_d = laminate_1d_ensemble()
    return [
        (one_d, GENERIC_FUNCTIONALS + [energy_functional_1d()]),
        (ternary_2d_ensemble(), list(GENERIC_FUNCTIONALS)),
        (anisotropic_2d_ensemble(), list(GENERIC_FUNCTIONALS)),
    ]


def run_battery(radius: float = 0.5, q_values: Sequence[int] = (1, 2), rho: float = 1.0) -> dict:
    """Every verdict of the bundled battery as a JSON-ready dictionary."""
    verdicts = []
    for ens, functionals in bundled_battery():
        for X in functionals:
            vals = _table(ens, X).ravel()
            named = Functional(X.name, lambda e, c, v=vals: v)
            verdicts.append(verify_sg(ens, named, radius, rho).to_dict())
            for q in q_values:
                verdicts.append(verify_q_sg(ens, named, radius, q).to_dict())
    return {
        "radius": radius,
        "rho": rho,
        "q_values": list(q_values),
        "verdicts": verdicts,
        "all_passed": all(v["passed"] for v in verdicts),
    }


def battery_json(report: dict) -> str:
    return json.dumps(report, indent=2)
