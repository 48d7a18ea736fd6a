"""Homogenized-coefficient approximations and corrector moments from solved samples."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import stats
from .grid import AveragingMask, cell_centers, center_index, face_difference
from .solver import CorrectorSolution, flux

CSV_COLUMNS = ["sample_index", "T", "L", "R", "xi", "xi_prime", "value_with", "value_without",
               "zero_order", "zero_order_raw", "seed"]


@dataclass
class EnergyEstimate:
    xi: tuple
    xi_prime: tuple
    T: float
    L: float
    R: float
    value_with_zero_order: float
    value_without_zero_order: float
    zero_order_part: float
    sample_index: int = 0
    seed: int = 0

    @property
    def zero_order_raw(self) -> float:
        """``int phi'_T phi_T eta_L`` without the ``T^-1`` factor."""
        return self.zero_order_part * self.T

    def csv_row(self) -> list:
        return [self.sample_index, self.T, self.L, self.R, " ".join(map(repr, self.xi)),
                " ".join(map(repr, self.xi_prime)), repr(self.value_with_zero_order),
                repr(self.value_without_zero_order), repr(self.zero_order_part), repr(self.zero_order_raw), self.seed]

    @classmethod
    def from_csv_row(cls, row: dict) -> "EnergyEstimate":
        return cls(
            xi=tuple(float(v) for v in row["xi"].split()),
            xi_prime=tuple(float(v) for v in row["xi_prime"].split()),
            T=float(row["T"]), L=float(row["L"]), R=float(row["R"]),
            value_with_zero_order=float(row["value_with"]),
            value_without_zero_order=float(row["value_without"]),
            zero_order_part=float(row["zero_order"]),
            sample_index=int(row["sample_index"]), seed=int(row["seed"]),
        )


def write_csv(rows: Sequence[EnergyEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_csv(text: str) -> list[EnergyEstimate]:
    return [EnergyEstimate.from_csv_row(r) for r in csv.DictReader(io.StringIO(text))]


def _same_problem(a: CorrectorSolution, b: CorrectorSolution) -> bool:
    fa, fb = a.operator.field, b.operator.field
    return (a.T == b.T and fa.box == fb.box and fa.spacing == fb.spacing
            and (fa is fb or np.array_equal(fa.cells, fb.cells)))


def energy_estimate(phi: CorrectorSolution, phi_adj: CorrectorSolution, mask: AveragingMask,
                    sample_index: int = 0, seed: int = 0, strict: bool = True) -> EnergyEstimate:
    """Masked energy of ``(xi' + grad phi') . A (xi + grad phi)`` with and without ``T^-1 phi' phi``.

    The energy density is integrated face by face with the same fluxes as the
    solver, so it is the mask-weighted version of the discrete bilinear form
    (exact for constant fields and axis-aligned laminates).  ``strict``
    enforces ``R - L >= 2 sqrt(T)``.
    """
    if not _same_problem(phi, phi_adj):
        raise ValueError("corrector and adjoint corrector were solved on different problems")
    if mask.weights.box != phi.phi.box:
        raise ValueError("mask was built on a different box")
    T, L, R = phi.T, mask.radius, phi.domain_radius
    if strict and R - L < 2 * np.sqrt(T) - 1e-12:
        raise ValueError(f"R - L = {R - L:.3g} < 2 sqrt(T) = {2 * np.sqrt(T):.3g}")
    h = phi.phi.spacing
    vol = h ** phi.phi.dimension
    u, v = phi.phi.values, phi_adj.phi.values
    F = flux(phi.operator if not phi.operator.transpose_flag else phi.operator.adjoint(), u, phi.xi)
    xp = phi_adj.xi
    energy = 0.0
    for i, (Fi, wi) in enumerate(zip(F, mask.face_weights)):
        gi = face_difference(v, i, h) + xp[i]
        energy += float(np.sum(wi * gi * Fi))
    energy *= vol
    zero = float(np.sum(mask.weights.values * u * v)) * vol / T
    return EnergyEstimate(tuple(phi.xi.tolist()), tuple(xp.tolist()), T, L, R, energy + zero, energy, zero,
                          sample_index, seed)


@dataclass
class ATEstimate:
    """Monte Carlo mean of ``xi' . A~_{T,L} xi`` with a jackknife CI."""

    value: float
    ci_halfwidth: float
    stderr: float
    n_samples: int
    T: float
    L: float
    R: float


def estimate_A_T(samples: Sequence[EnergyEstimate], with_zero_order: bool = False) -> ATEstimate:
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    key = {(s.T, s.L, s.R, s.xi, s.xi_prime) for s in samples}
    if len(key) != 1:
        raise ValueError("samples have heterogeneous (T, L, R, xi, xi') parameters")
    vals = np.array([s.value_with_zero_order if with_zero_order else s.value_without_zero_order for s in samples])
    m, var = stats.jackknife(vals)
    s0 = samples[0]
    return ATEstimate(m, stats.t_quantile(len(vals)) * np.sqrt(var), float(np.sqrt(var)), len(vals), s0.T, s0.L, s0.R)


def richardson_weights(Ts: Sequence[float], order: int) -> np.ndarray:
    """Weights of the last ``order + 1`` dyadic values that cancel ``T^-1 ... T^-order``."""
    Ts = np.asarray(Ts, dtype=float)
    if order < 1:
        raise ValueError("order must be at least 1")
    if len(Ts) < order + 1:
        raise ValueError(f"order {order} needs {order + 1} values of T")
    if np.any(np.abs(Ts[1:] / Ts[:-1] - 2.0) > 1e-12):
        raise ValueError("T values must be a dyadic progression")
    x = 1.0 / Ts[-(order + 1):]
    w = np.empty(order + 1)
    for j in range(order + 1):
        others = np.delete(x, j)
        w[j] = np.prod(others / (others - x[j]))
    full = np.zeros(len(Ts))
    full[-(order + 1):] = w
    return full


@dataclass
class Extrapolation:
    value: float
    ci_halfwidth: float
    order: int
    weights: np.ndarray


def richardson_extrapolate(values: Sequence, order: int = 1) -> Extrapolation:
    """Extrapolate ``T -> infinity`` from ``[(T, estimate), ...]``.

    ``estimate`` is an :class:`ATEstimate` or a ``(value, ci)`` pair; CIs are
    propagated by linearity assuming independent estimates.
    """
    Ts = [float(t) for t, _ in values]
    vals, cis = [], []
    for _, e in values:
        if isinstance(e, ATEstimate):
            vals.append(e.value)
            cis.append(e.ci_halfwidth)
        elif np.ndim(e) == 0:
            vals.append(float(e))
            cis.append(0.0)
        else:
            vals.append(float(e[0]))
            cis.append(float(e[1]))
    w = richardson_weights(Ts, order)
    return Extrapolation(float(w @ vals), float(np.sqrt(np.sum((w * cis) ** 2))), order, w)


@dataclass
class MomentEstimate:
    q: float
    T: float
    moment_phi: float
    moment_grad: float
    n_samples: int
    ci_halfwidth: float
    ci_grad: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def face_radius(box, spacing: float, axis: int) -> np.ndarray:
    """Distance from the origin of every face centre normal to ``axis``."""
    coords = cell_centers(box, spacing)
    c = coords[axis]
    coords[axis] = np.concatenate([[c[0] - spacing], c]) + 0.5 * spacing
    grids = np.meshgrid(*coords, indexing="ij")
    return np.sqrt(sum(g * g for g in grids))


def gradient_energy_in_ball(sol: CorrectorSolution, radius: float) -> float:
    """``int_{B_r} |grad phi|^2`` over faces whose centres lie in the ball."""
    u = sol.phi
    h = u.spacing
    total = 0.0
    for i in range(u.dimension):
        g = face_difference(u.values, i, h)
        total += float(np.sum(np.where(face_radius(u.box, h, i) < radius, g * g, 0.0)))
    return total * h ** u.dimension


def corrector_moments(phis: Sequence[CorrectorSolution], q: float, probe_radius: float) -> MomentEstimate:
    """``<|phi_T(0)|^q>^(1/q)`` at the centre cell and ``<(int_{B_r}|grad phi_T|^2)^(q/2)>^(1/q)``."""
    if q < 1:
        raise ValueError("q must be at least 1")
    if not phis:
        raise ValueError("no samples")
    T = phis[0].T
    if any(p.T != T for p in phis):
        raise ValueError("samples have different T")
    for p in phis:
        if probe_radius + 2 * np.sqrt(T) > p.domain_radius + 1e-12:
            raise ValueError("probe ball is not inside the safe region R - 2 sqrt(T)")
    centre = np.array([p.phi.values[center_index(p.phi.shape)] for p in phis])
    grad = np.array([gradient_energy_in_ball(p, probe_radius) for p in phis])
    return moments_from_values(centre, grad, q, T)


def moments_from_values(centre, grad_energy, q: float, T: float) -> MomentEstimate:
    """Moments from per-sample ``phi_T(0)`` and ``int_{B_r} |grad phi_T|^2`` values."""
    if q < 1:
        raise ValueError("q must be at least 1")
    centre = np.abs(np.asarray(centre, dtype=float))
    grad = np.sqrt(np.asarray(grad_energy, dtype=float))
    if centre.size == 0 or centre.shape != grad.shape:
        raise ValueError("need matching, non-empty sample arrays")

    def qmean(v):
        return float(stats.mean(v ** q) ** (1.0 / q))

    if len(centre) >= 2:
        m_phi, ci = stats.jackknife_ci(centre, qmean)
        m_grad, ci_g = stats.jackknife_ci(grad, qmean)
    else:
        m_phi, m_grad, ci, ci_g = qmean(centre), qmean(grad), float("nan"), float("nan")
    return MomentEstimate(q, T, m_phi, m_grad, len(centre), ci, ci_g)
