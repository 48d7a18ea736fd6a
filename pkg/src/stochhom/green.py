"""Empirical probes of decay bounds for the massive Green function."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import stats
from .ensemble import EnsembleSpec, realize_field
from .grid import (
    CoefficientField,
    GridFunction,
    cell_centers,
    centered_box,
    cell_gradient,
    face_difference,
    gradient,
)
from .solver import OperatorSpec, solve_green_column

MIN_ANNULI = 4
MIN_ANNEALED_SAMPLES = 50
MAX_ANNEALED_SAMPLES = 100_000


@dataclass
class GreenProbeReport:
    T: float
    radii: list
    pointwise_max_per_annulus: list = field(default_factory=list)
    grad_L2p_per_annulus: dict = field(default_factory=dict)
    fitted_exponential_rate: float = float("nan")
    fitted_spatial_exponent: dict = field(default_factory=dict)
    pass_flags: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.size and np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        for v in self.pointwise_max_per_annulus:
            if v < 0:
                raise ValueError("pointwise maxima must be nonnegative")
        for vals in self.grad_L2p_per_annulus.values():
            if any(v < 0 for v in vals):
                raise ValueError("norms must be nonnegative")

    @property
    def c_hat(self) -> float:
        """Dimensionless rate ``c`` in ``exp(-c r / sqrt(T))``."""
        return self.fitted_exponential_rate * np.sqrt(self.T)

    def to_json(self) -> str:
        d = asdict(self)
        d["grad_L2p_per_annulus"] = {repr(float(k)): v for k, v in self.grad_L2p_per_annulus.items()}
        d["fitted_spatial_exponent"] = {repr(float(k)): v for k, v in self.fitted_spatial_exponent.items()}
        return json.dumps(d, indent=2, default=float)

    @classmethod
    def from_json(cls, text: str) -> "GreenProbeReport":
        d = json.loads(text)
        d["grad_L2p_per_annulus"] = {float(k): v for k, v in d["grad_L2p_per_annulus"].items()}
        d["fitted_spatial_exponent"] = {float(k): v for k, v in d["fitted_spatial_exponent"].items()}
        return cls(**d)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def _distance_from(box, spacing: float, source) -> np.ndarray:
    coords = np.meshgrid(*cell_centers(box, spacing), indexing="ij")
    return np.sqrt(sum((c - s) ** 2 for c, s in zip(coords, source)))


def _source_of(G: GridFunction, source) -> np.ndarray:
    if source is None:
        return np.zeros(G.dimension)
    s = np.asarray(source, dtype=float)
    if s.shape != (G.dimension,):
        raise ValueError("source must have one coordinate per dimension")
    return s


def _check_radii(G: GridFunction, radii, source) -> np.ndarray:
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or np.any(r <= 0):
        raise ValueError("radii must be positive")
    if np.any(np.diff(r) <= 0):
        raise ValueError("radii must be strictly increasing")
    s = _source_of(G, source)
    room = min(min(s - G.box.lower), min(G.box.upper - s))
    if r[-1] > room / 2 + 1e-12:
        raise ValueError(f"radius {r[-1]} exceeds half the distance {room} from the source to the boundary")
    return r


def gradient_magnitude(u: GridFunction) -> np.ndarray:
    """Cell-centred ``|grad u|`` from the mean of the two adjacent face differences."""
    return np.sqrt(np.sum(cell_gradient(gradient(u)) ** 2, axis=-1))


def face_gradient_energy(u: GridFunction, center, radius: float) -> float:
    """``int_{B_r(center)} |grad u|^2`` summed over faces whose centres lie in the ball."""
    h = u.spacing
    coords = cell_centers(u.box, h)
    total = 0.0
    for i in range(u.dimension):
        c = list(coords)
        c[i] = np.concatenate([[c[i][0] - h], c[i]]) + 0.5 * h
        grids = np.meshgrid(*c, indexing="ij")
        dist2 = sum((g - z) ** 2 for g, z in zip(grids, center))
        g = face_difference(u.values, i, h)
        total += float(np.sum(np.where(dist2 < radius * radius, g * g, 0.0)))
    return total * h ** u.dimension


def newtonian_shape(r, T: float, d: int) -> np.ndarray:
    """Spatial profile of the decay bound: ``ln(2 + sqrt(T)/r)`` (d=2), ``r^(2-d)`` (d>2)."""
    r = np.asarray(r, dtype=float)
    if d == 2:
        return np.log(2.0 + np.sqrt(T) / r)
    if d == 1:
        return np.ones_like(r)
    return r ** (2.0 - d)


def yukawa_potential(r, T: float, d: int = 3) -> np.ndarray:
    """Whole-space massive Green function of ``T^-1 - Laplace`` for d=3: ``exp(-r/sqrt T)/(4 pi r)``."""
    if d != 3:
        raise ValueError("closed form implemented for d=3 only")
    r = np.asarray(r, dtype=float)
    return np.exp(-r / np.sqrt(T)) / (4 * np.pi * r)


# ---------------------------------------------------------------------------
# quenched probes
# ---------------------------------------------------------------------------


def pointwise_decay_probe(G: GridFunction, T: float, radii: Sequence[float], source=None) -> GreenProbeReport:
    """Maximum of ``G`` on each annulus ``{r < |x - y| <= 2r}`` and fitted exponential rate.

    ``log(max G / shape(r)) = log C - rate * r`` is fitted by least squares;
    the probe passes iff ``rate > 0`` and one constant ``C`` (within a factor
    2 of the fit) bounds every annulus.
    """
    if not np.any(G.values):
        raise ValueError("degenerate Green column")
    r = _check_radii(G, radii, source)
    if r.size < MIN_ANNULI:
        raise ValueError(f"insufficient annuli: need at least {MIN_ANNULI}")
    dist = _distance_from(G.box, G.spacing, _source_of(G, source))
    maxima = []
    for rk in r:
        sel = (dist > rk) & (dist <= 2 * rk)
        if not sel.any():
            raise ValueError(f"empty annulus at radius {rk}")
        maxima.append(float(np.max(G.values[sel])))
    maxima = np.asarray(maxima)
    shape = newtonian_shape(r, T, G.dimension)
    flags = {"positive": bool(np.all(maxima > 0))}
    rate = float("nan")
    if flags["positive"]:
        fit = stats.weighted_linear_fit(r, np.log(maxima / shape))
        rate = -fit.slope
        log_c = fit.intercept + float(np.max(fit.residuals))
        bound = np.exp(log_c - rate * r) * shape
        flags["rate_positive"] = rate > 0
        flags["single_constant"] = bool(np.all(maxima <= bound * (1 + 1e-12)) and np.ptp(fit.residuals) < np.log(2))
    else:
        flags["rate_positive"] = False
        flags["single_constant"] = False
    flags["pass"] = bool(flags["rate_positive"] and flags["single_constant"])
    flags["min_value_ok"] = bool(np.min(G.values) >= -1e-8 * np.max(np.abs(G.values)))
    return GreenProbeReport(T, r.tolist(), maxima.tolist(), {}, rate, {}, flags)


def annulus_gradient_norms(G: GridFunction, radii: Sequence[float], p_sweep: Sequence[float] = (1.0,),
                           source=None, tolerance: float = 0.15) -> GreenProbeReport:
    """Annulus averages ``(fint_{R<|y|<=2R} |grad G|^{2p})^{1/2p}`` for every ``(R, p)``.

    The average is taken with respect to the annulus measure so that the
    power-mean inequality makes the table nondecreasing in ``p``; it differs
    from ``R^{-d} int`` by the constant ``(|annulus| / R^d)^{1/2p}``.
    """
    p_sweep = [float(p) for p in p_sweep]
    if not p_sweep or any(p < 1 or p > 2 for p in p_sweep):
        raise ValueError("p values must lie in [1, 2]")
    r = _check_radii(G, radii, source)
    dist = _distance_from(G.box, G.spacing, _source_of(G, source))
    g = gradient_magnitude(G)
    norms: dict[float, list] = {p: [] for p in p_sweep}
    for rk in r:
        sel = (dist > rk) & (dist <= 2 * rk)
        if not sel.any():
            raise ValueError(f"empty annulus at radius {rk} for spacing {G.spacing}")
        vals = g[sel]
        for p in p_sweep:
            norms[p].append(float(np.mean(vals ** (2 * p)) ** (1 / (2 * p))))
    exponents = {}
    for p in p_sweep:
        if len(r) >= 3 and all(v > 0 for v in norms[p]):
            exponents[p] = stats.fit_loglog_slope(list(zip(r, norms[p]))).slope
        else:
            exponents[p] = float("nan")
    target = 1.0 - G.dimension
    monotone = all(
        norms[a][k] <= norms[b][k] * (1 + 1e-12) for a, b in zip(sorted(p_sweep), sorted(p_sweep)[1:]) for k in range(len(r))
    )
    within = [p for p in sorted(p_sweep) if abs(exponents[p] - target) <= tolerance]
    flags = {"monotone_in_p": monotone, "largest_p_within_tolerance": max(within) if within else None}
    flags["pass"] = bool(monotone and exponents[min(p_sweep)] == exponents[min(p_sweep)]
                         and abs(exponents[min(p_sweep)] - target) <= tolerance)
    return GreenProbeReport(float("nan"), r.tolist(), [], norms, float("nan"), exponents, flags)


def annulus_table_csv(report: GreenProbeReport, ci: dict | None = None) -> str:
    """Rows ``R, p, norm, fit_exponent, ci``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "p", "norm", "fit_exponent", "ci"])
    for p, vals in report.grad_L2p_per_annulus.items():
        for k, (R, v) in enumerate(zip(report.radii, vals)):
            c = ci[p][k] if ci and p in ci else 0.0
            w.writerow([repr(float(R)), repr(float(p)), repr(float(v)),
                        repr(float(report.fitted_spatial_exponent.get(p, float("nan")))), repr(float(c))])
    return buf.getvalue()


def ball_gradient_decay(G: GridFunction, distances: Sequence[float], ball_radius: float = 1.0,
                        source=None) -> tuple[float, list]:
    """Local ``(int_{B_1(z)} |grad G|^2)^(1/2)`` at ``z = |z| e_1`` and its fitted log-log exponent.

    Only the sign of the exponent is meaningful (no target value exists).
    """
    s = _source_of(G, source)
    vals = []
    for D in distances:
        z = s.copy()
        z[0] += D
        vals.append(np.sqrt(face_gradient_energy(G, z, ball_radius)))
    fit = stats.fit_loglog_slope(list(zip(distances, vals)))
    return fit.slope, vals


def _fit_rate(r: np.ndarray, values: np.ndarray, d: int) -> float:
    """Rate of ``values * r^(d-1)`` decaying like ``exp(-rate r)``."""
    y = np.log(values * r ** (d - 1))
    return -stats.weighted_linear_fit(r, y).slope


# ---------------------------------------------------------------------------
# annealed probe
# ---------------------------------------------------------------------------


def _direction_cells(G: GridFunction, r: float) -> list[tuple[int, ...]]:
    """Cells nearest to ``+-r e_i`` (2d symmetric directions)."""
    d = G.dimension
    coords = cell_centers(G.box, G.spacing)
    centre = [int(np.argmin(np.abs(c))) for c in coords]
    cells = []
    for i in range(d):
        for sgn in (1, -1):
            idx = list(centre)
            idx[i] = int(np.argmin(np.abs(coords[i] - sgn * r)))
            cells.append(tuple(idx))
    return cells


@dataclass
class AnnealedTable:
    T: float
    radii: list
    mean_sq_gradient: list
    ci: list
    exponent: float
    exponent_stderr: float
    rate: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def annealed_gradient_probe(spec: EnsembleSpec, T: float, n_samples: int, radii: Sequence[float],
                            spacing: float = 0.5, tol: float = 1e-10, first_sample: int = 0) -> AnnealedTable:
    """``<|grad G_T(y, 0)|^2>^(1/2)`` at ``|y| = r`` averaged over 2d axis directions and samples."""
    if n_samples < MIN_ANNEALED_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_ANNEALED_SAMPLES}")
    if n_samples > MAX_ANNEALED_SAMPLES:
        raise ValueError("sampling budget exceeded")
    r = np.asarray(radii, dtype=float)
    if np.any(np.diff(r) <= 0) or r.size < 3:
        raise ValueError("need at least 3 strictly increasing radii")
    box = centered_box(2 * r[-1] + spacing, spacing, spec.dimension)
    per_sample = np.empty((n_samples, r.size))
    for k in range(n_samples):
        field_ = realize_field(spec, box, spacing, first_sample + k)
        G = solve_green_column(OperatorSpec(field_, T), tol=tol)
        g = gradient_magnitude(G)
        for j, rj in enumerate(r):
            per_sample[k, j] = np.mean([g[c] ** 2 for c in _direction_cells(G, rj)])
    means, cis = [], []
    for j in range(r.size):
        m, ci = stats.jackknife_ci(per_sample[:, j])
        means.append(m)
        cis.append(ci)
    root = np.sqrt(means)
    root_ci = 0.5 * np.asarray(cis) / np.maximum(root, 1e-300)
    fit = stats.fit_loglog_slope(list(zip(r, root, root_ci)))
    return AnnealedTable(T, r.tolist(), root.tolist(), root_ci.tolist(), fit.slope, fit.stderr,
                         _fit_rate(r, root, spec.dimension), n_samples)


# ---------------------------------------------------------------------------
# perturbation probe
# ---------------------------------------------------------------------------


def _ball_cells(field_: CoefficientField, center, radius: float) -> np.ndarray:
    dist = _distance_from(field_.box, field_.spacing, center)
    return dist < radius


def perturbation_fields(field_: CoefficientField, center, radius: float, contrast: float = 0.25,
                        n_random: int = 6, seed: int = 0) -> list[CoefficientField]:
    """Candidate fields equal to ``field_`` outside the ball.

    Order: the unperturbed field, all ``contrast*Id``, all ``Id``, then
    ``n_random`` independent per-cell fills with the two extreme values.
    """
    inside = _ball_cells(field_, center, radius)
    if not inside.any():
        raise ValueError("perturbation ball contains no cell")
    d = field_.dimension
    eye = np.eye(d)
    out = [field_]
    for value in (contrast * eye, eye):
        cells = field_.cells.copy()
        cells[inside] = value
        out.append(CoefficientField(field_.box, field_.spacing, cells))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6F5C,)))
    for _ in range(n_random):
        cells = field_.cells.copy()
        coin = rng.random(int(inside.sum())) < 0.5
        cells[inside] = np.where(coin[:, None, None], contrast * eye, eye)
        out.append(CoefficientField(field_.box, field_.spacing, cells))
    return out


def _cell_of(field_: CoefficientField, x) -> tuple[int, ...]:
    coords = cell_centers(field_.box, field_.spacing)
    return tuple(int(np.argmin(np.abs(c - xi))) for c, xi in zip(coords, x))


@dataclass
class OscillationReport:
    T: float
    center: list
    radius: float
    x_positions: list
    ratios: list
    max_ratio: float
    n_candidates: int

    def to_dict(self) -> dict:
        return asdict(self)


def green_oscillation_probe(field_: CoefficientField, perturbation_ball: tuple, T: float,
                            x_positions: Sequence[Sequence[float]] | None = None, contrast: float = 0.25,
                            n_random: int = 6, seed: int = 0, tol: float = 1e-10,
                            method: str = "auto") -> OscillationReport:
    """``max_{A~} int_B |grad G~(., x)|^2 / int_B |grad G(., x)|^2`` over 2 + ``n_random`` extreme fills."""
    center, radius = perturbation_ball
    center = np.asarray(center, dtype=float)
    if x_positions is None:
        x_positions = [np.zeros(field_.dimension)]
    xs = [np.asarray(x, dtype=float) for x in x_positions]
    for x in xs:
        if np.linalg.norm(x - center) <= radius:
            raise ValueError("x overlaps the perturbation ball")
    candidates = perturbation_fields(field_, center, radius, contrast, n_random, seed)
    ratios = []
    for x in xs:
        src = _cell_of(field_, x)
        energies = []
        for cand in candidates:
            G = solve_green_column(OperatorSpec(cand, T), src, tol, method)
            energies.append(face_gradient_energy(G, center, radius))
        base = energies[0]
        if base <= 0:
            raise ValueError("unperturbed Green gradient vanishes on the ball")
        ratios.append(max(energies) / base)
    return OscillationReport(T, center.tolist(), float(radius), [x.tolist() for x in xs], ratios,
                             float(max(ratios)), len(candidates))
