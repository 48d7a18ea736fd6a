"""Monte Carlo scaling studies: sample scheduling, resumable records and slope fits.

Every study is split into *cells*, the unit of resumption.  The variance study
has one cell per ``(L, T)``; coupled studies (systematic error, gradient
convergence, moments, sensitivity) solve all ``T`` values on the same
realisation, so their cells are consecutive blocks of sample indices.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, stats
from .ensemble import EnsembleKind, EnsembleSpec, realize_field
from .estimator import (
    CSV_COLUMNS,
    EnergyEstimate,
    energy_estimate,
    gradient_energy_in_ball,
    moments_from_values,
    richardson_weights,
)
from .green import face_gradient_energy, perturbation_fields
from .grid import center_index, centered_box, face_difference, make_mask
from .solver import (
    OperatorSpec,
    SolverError,
    operator_is_symmetric,
    solve_green_column,
    solve_modified_corrector,
    solve_psi,
)
from .stats import LinearFit
from .stats import fit_loglog_slope  # noqa: F401  (re-exported study API)

STUDY_KINDS = ("variance", "systematic", "gradient", "moments", "sensitivity")
AUDIT_COLUMNS = ["residual", "iterations", "field_digest"]
ENERGY_COLUMNS = ["cell"] + CSV_COLUMNS + AUDIT_COLUMNS
QUANTITY_COLUMNS = ["cell", "sample_index", "T", "L", "R", "quantity", "value", "seed"] + AUDIT_COLUMNS


class ResumeError(RuntimeError):
    """Existing output does not match the plan or is partially written."""


def correlation_length(spec: EnsembleSpec) -> float:
    kind = EnsembleKind(spec.kind)
    if kind is EnsembleKind.POISSON:
        return 2.0 * spec.inclusion_radius
    if kind is EnsembleKind.LAMINATE:
        return 2.0 * spec.band_width
    if kind is EnsembleKind.CHECKERBOARD:
        return 1.0
    return 0.0


def _is_dyadic(Ts: Sequence[float]) -> bool:
    return len(Ts) >= 2 and all(abs(b / a - 2.0) < 1e-12 for a, b in zip(Ts, Ts[1:]))


@dataclass(frozen=True)
class StudyPlan:
    """Everything a study needs; ``R = L + kappa sqrt(T)`` (coupled studies use the largest T)."""

    kind: str = "variance"
    ensemble: EnsembleSpec = field(default_factory=lambda: EnsembleSpec(EnsembleKind.POISSON, 2))
    xi: tuple = (1.0, 0.0)
    xi_prime: tuple = (1.0, 0.0)
    L_values: tuple = (8.0, 16.0, 32.0)
    T_values: tuple = ()
    T_over_L: float = 1.0
    kappa: float = 3.0
    h: float = 0.25
    n_samples: int = 200
    with_zero_order: bool = False
    seed: int = 0
    tol: float = 1e-9
    method: str = "auto"
    q_list: tuple = (2.0,)
    probe_radius: float = 2.0
    first_sample: int = 0
    chunk_size: int = 10
    ball_radius: float = 2.0
    distances: tuple = (6.0, 12.0, 24.0)
    include_psi: bool = False

    def __post_init__(self):
        for name in ("xi", "xi_prime", "L_values", "T_values", "q_list", "distances"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "seed", int(self.seed))
        if self.ensemble.master_seed != self.seed:
            object.__setattr__(self, "ensemble", self.ensemble.with_seed(self.seed))
        self.validate()

    @property
    def dimension(self) -> int:
        return self.ensemble.dimension

    @property
    def spec(self) -> EnsembleSpec:
        """The ensemble law; its master seed always equals ``seed``."""
        return self.ensemble

    def validate(self) -> None:
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        d = self.dimension
        for name in ("xi", "xi_prime"):
            v = np.asarray(getattr(self, name))
            if v.shape != (d,) or abs(np.linalg.norm(v) - 1) > 1e-12:
                raise ValueError(f"{name} must be a unit vector in dimension {d}")
        if self.n_samples < 8:
            raise ValueError("n_samples must be at least 8")
        if self.kappa < 2:
            raise ValueError("kappa must be at least 2 so that R - L >= 2 sqrt(T)")
        if self.h <= 0 or self.tol <= 0 or self.chunk_size < 1:
            raise ValueError("h, tol and chunk_size must be positive")
        if any(t <= 0 for t in self.T_values) or any(L <= 0 for L in self.L_values):
            raise ValueError("L and T values must be positive")
        if self.kind in ("variance", "systematic", "gradient"):
            if not self.L_values:
                raise ValueError("L_values must not be empty")
            ell = correlation_length(self.ensemble)
            if min(self.L_values) < 4 * ell - 1e-12:
                raise ValueError(f"L must be at least 4 correlation lengths ({4 * ell})")
        if self.kind == "variance" and not self.T_values and self.T_over_L <= 0:
            raise ValueError("T_over_L must be positive")
        if self.kind in ("systematic", "gradient", "moments") and not _is_dyadic(self.T_values):
            raise ValueError("T_values must be a dyadic progression")
        if self.kind == "systematic" and len(self.T_values) < 4:
            raise ValueError("the systematic study needs at least 4 values of T")
        if self.kind == "gradient" and len(self.T_values) < 3:
            raise ValueError("the gradient study needs at least 3 values of T")
        if self.kind == "moments" and (len(self.T_values) < 3 or any(q < 1 for q in self.q_list)):
            raise ValueError("the moment study needs at least 3 values of T and q >= 1")
        if self.kind == "sensitivity":
            if len(self.T_values) != 1:
                raise ValueError("the sensitivity probe uses exactly one T")
            if any(D < 2 * self.ball_radius for D in self.distances):
                raise ValueError("geometry: every distance |z - x| must be at least twice the ball radius")

    # -- cells ---------------------------------------------------------------

    def variance_cells(self) -> list[tuple[float, float]]:
        if self.T_values:
            return [(L, T) for L in self.L_values for T in self.T_values]
        return [(L, self.T_over_L * L) for L in self.L_values]

    def cell_ids(self) -> list[str]:
        if self.kind == "variance":
            return [f"L={L!r}|T={T!r}" for L, T in self.variance_cells()]
        out = []
        for start in range(0, self.n_samples, self.chunk_size):
            a = self.first_sample + start
            b = self.first_sample + min(start + self.chunk_size, self.n_samples) - 1
            out.append(f"samples={a}-{b}")
        return out

    def rows_per_cell(self, cell: str) -> int:
        if self.kind == "variance":
            return self.n_samples
        a, b = (int(v) for v in cell.split("=")[1].split("-"))
        return (b - a + 1) * self.rows_per_sample()

    def rows_per_sample(self) -> int:
        nT = len(self.T_values)
        if self.kind == "systematic":
            return nT
        if self.kind == "gradient":
            return 2 * nT
        if self.kind == "moments":
            return (3 if self.include_psi else 2) * nT
        if self.kind == "sensitivity":
            return 3 * len(self.distances)
        return 1

    def domain_radius(self, L: float, T: float) -> float:
        return L + self.kappa * np.sqrt(T)

    # -- (de)serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["ensemble"] = self.ensemble.to_dict()
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "StudyPlan":
        data = dict(data)
        data["ensemble"] = EnsembleSpec.from_dict(data["ensemble"])
        return cls(**data)


# ---------------------------------------------------------------------------
# per-sample work (module level so that worker processes can pickle it)
# ---------------------------------------------------------------------------


def _correctors(op: OperatorSpec, plan: StudyPlan):
    """Primal and adjoint corrector; the adjoint reuses the primal when they coincide."""
    sol = solve_modified_corrector(op, plan.xi, plan.tol, plan.method)
    if plan.xi == plan.xi_prime and operator_is_symmetric(op):
        return sol, sol
    adj = solve_modified_corrector(op.adjoint(), plan.xi_prime, plan.tol, plan.method)
    return sol, adj


def _energy_row(cell: str, est: EnergyEstimate, residual: float, iterations: int, digest: str) -> dict:
    row = dict(zip(["cell"] + CSV_COLUMNS, [cell] + est.csv_row()))
    row.update(residual=repr(float(residual)), iterations=int(iterations), field_digest=digest)
    return row


def _quantity_row(cell, k, T, L, R, name, value, seed, residual=0.0, iterations=0, digest="") -> dict:
    return {"cell": cell, "sample_index": k, "T": repr(float(T)), "L": repr(float(L)), "R": repr(float(R)),
            "quantity": name, "value": repr(float(value)), "seed": seed, "residual": repr(float(residual)),
            "iterations": int(iterations), "field_digest": digest}


def _variance_sample(plan: StudyPlan, cell: str, L: float, T: float, k: int) -> list[dict]:
    R = plan.domain_radius(L, T)
    box = centered_box(R, plan.h, plan.dimension)
    f = realize_field(plan.spec, box, plan.h, k)
    op = OperatorSpec(f, T)
    sol, adj = _correctors(op, plan)
    est = energy_estimate(sol, adj, make_mask(box, plan.h, L), k, plan.seed)
    res = max(sol.residual_norm, adj.residual_norm)
    its = sol.iterations + (adj.iterations if adj is not sol else 0)
    return [_energy_row(cell, est, res, its, f.digest())]


def _coupled_box(plan: StudyPlan, T_max: float):
    if plan.kind == "moments":
        R = plan.probe_radius + plan.kappa * np.sqrt(T_max)
        return R, centered_box(R, plan.h, plan.dimension)
    L = plan.L_values[0]
    R = plan.domain_radius(L, T_max)
    return R, centered_box(R, plan.h, plan.dimension)


def _systematic_sample(plan: StudyPlan, cell: str, k: int) -> list[dict]:
    L = plan.L_values[0]
    R, box = _coupled_box(plan, plan.T_values[-1])
    f = realize_field(plan.spec, box, plan.h, k)
    mask = make_mask(box, plan.h, L)
    digest = f.digest()
    rows = []
    op = OperatorSpec(f, plan.T_values[0])
    for T in plan.T_values:
        op = op.with_massive(T)
        sol, adj = _correctors(op, plan)
        est = energy_estimate(sol, adj, mask, k, plan.seed)
        rows.append(_energy_row(cell, est, max(sol.residual_norm, adj.residual_norm), sol.iterations, digest))
    return rows


def _gradient_sample(plan: StudyPlan, cell: str, k: int) -> list[dict]:
    """``D_T = sum eta_L |grad(phi_2T - phi_T)|^2 h^d`` and the masked ``(phi_2T - phi_T)^2``."""
    L = plan.L_values[0]
    Ts = list(plan.T_values) + [2 * plan.T_values[-1]]
    R, box = _coupled_box(plan, Ts[-1])
    f = realize_field(plan.spec, box, plan.h, k)
    digest = f.digest()
    mask = make_mask(box, plan.h, L)
    vol = plan.h ** plan.dimension
    op = OperatorSpec(f, Ts[0])
    sols = []
    for T in Ts:
        op = op.with_massive(T)
        sols.append(solve_modified_corrector(op, plan.xi, plan.tol, plan.method))
    rows = []
    for T, a, b in zip(plan.T_values, sols, sols[1:]):
        w = b.phi.values - a.phi.values
        D = sum(float(np.sum(fw * face_difference(w, i, plan.h) ** 2))
                for i, fw in enumerate(mask.face_weights)) * vol
        sq = float(np.sum(mask.weights.values * w * w)) * vol
        res = max(a.residual_norm, b.residual_norm)
        rows.append(_quantity_row(cell, k, T, L, R, "D", D, plan.seed, res, a.iterations + b.iterations, digest))
        rows.append(_quantity_row(cell, k, T, L, R, "phi_diff_sq", sq, plan.seed, res, 0, digest))
    return rows


def _moments_sample(plan: StudyPlan, cell: str, k: int) -> list[dict]:
    R, box = _coupled_box(plan, plan.T_values[-1])
    f = realize_field(plan.spec, box, plan.h, k)
    digest = f.digest()
    rows = []
    op = OperatorSpec(f, plan.T_values[0])
    for T in plan.T_values:
        op = op.with_massive(T)
        sol = solve_modified_corrector(op, plan.xi, plan.tol, plan.method)
        centre = sol.phi.values[center_index(sol.phi.shape)]
        grad = gradient_energy_in_ball(sol, plan.probe_radius)
        L = plan.probe_radius
        rows.append(_quantity_row(cell, k, T, L, R, "phi_center", centre, plan.seed, sol.residual_norm,
                                  sol.iterations, digest))
        rows.append(_quantity_row(cell, k, T, L, R, "grad_energy", grad, plan.seed, sol.residual_norm, 0, digest))
        if plan.include_psi:
            psi = solve_psi(op, sol, plan.tol, plan.method)
            rows.append(_quantity_row(cell, k, T, L, R, "psi_center", psi.values[center_index(psi.shape)],
                                      plan.seed, 0.0, 0, digest))
    return rows


def _probe_direction(plan: StudyPlan, k: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(plan.seed, spawn_key=(k, 0x5E45))))
    v = rng.standard_normal(plan.dimension)
    return v / np.linalg.norm(v)


def _sensitivity_sample(plan: StudyPlan, cell: str, k: int) -> list[dict]:
    """Ratio ``|osc phi_T(x)| / (h_T(z, x) (int_{B_3r(z)} |grad phi_T|^2 + 1)^(1/2))`` at ``x = 0``."""
    T = plan.T_values[0]
    rb = plan.ball_radius
    method = "direct" if plan.method == "auto" else plan.method
    R = max(plan.distances) + 3 * rb + plan.kappa * np.sqrt(T)
    box = centered_box(R, plan.h, plan.dimension)
    f = realize_field(plan.spec, box, plan.h, k)
    digest = f.digest()
    op = OperatorSpec(f, T)
    base = solve_modified_corrector(op, plan.xi, plan.tol, method)
    centre = center_index(base.phi.shape)
    G = solve_green_column(op, centre, plan.tol, method)
    direction = _probe_direction(plan, k)
    rows = []
    for D in plan.distances:
        z = D * direction
        h_T = np.sqrt(face_gradient_energy(G, z, rb))
        local = face_gradient_energy(base.phi, z, 3 * rb)
        delta = 0.0
        for cand in perturbation_fields(f, z, rb, plan.ensemble.contrast, 6, seed=k)[1:]:
            pert = solve_modified_corrector(OperatorSpec(cand, T), plan.xi, plan.tol, method)
            delta = max(delta, abs(pert.phi.values[centre] - base.phi.values[centre]))
        ratio = delta / (h_T * np.sqrt(local + 1.0))
        L = D
        rows.append(_quantity_row(cell, k, T, L, R, "delta_phi", delta, plan.seed, base.residual_norm, 0, digest))
        rows.append(_quantity_row(cell, k, T, L, R, "h_T", h_T, plan.seed, 0.0, 0, digest))
        rows.append(_quantity_row(cell, k, T, L, R, "ratio", ratio, plan.seed, 0.0, 0, digest))
    return rows


_SAMPLERS = {
    "systematic": _systematic_sample,
    "gradient": _gradient_sample,
    "moments": _moments_sample,
    "sensitivity": _sensitivity_sample,
}


def _cell_task(args) -> list[dict]:
    plan, cell, k = args
    if plan.kind == "variance":
        L, T = (float(part.split("=")[1]) for part in cell.split("|"))
        return _variance_sample(plan, cell, L, T, k)
    return _SAMPLERS[plan.kind](plan, cell, k)


def _cell_samples(plan: StudyPlan, cell: str) -> list[int]:
    if plan.kind == "variance":
        return list(range(plan.first_sample, plan.first_sample + plan.n_samples))
    a, b = (int(v) for v in cell.split("=")[1].split("-"))
    return list(range(a, b + 1))


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


def columns_for(plan: StudyPlan) -> list[str]:
    return ENERGY_COLUMNS if plan.kind in ("variance", "systematic") else QUANTITY_COLUMNS


def _rows_to_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class StudyRecord:
    plan: StudyPlan
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    slopes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    wall_clock: float = 0.0
    solver_stats: dict = field(default_factory=dict)

    def rows_by_cell(self) -> dict[str, list[dict]]:
        out: dict[str, list[dict]] = {}
        for r in self.rows:
            out.setdefault(r["cell"], []).append(r)
        return out

    def energy_estimates(self, cell: str | None = None) -> list[EnergyEstimate]:
        rows = self.rows if cell is None else self.rows_by_cell().get(cell, [])
        return [EnergyEstimate.from_csv_row(r) for r in rows]

    def check(self) -> None:
        """Sample counts match the plan for every completed cell."""
        for cell, rows in self.rows_by_cell().items():
            if cell not in self.plan.cell_ids():
                raise ResumeError(f"inconsistent resume state: unknown cell {cell!r}")
            if len(rows) != self.plan.rows_per_cell(cell):
                raise ResumeError(f"inconsistent resume state: cell {cell!r} has {len(rows)} rows, "
                                  f"expected {self.plan.rows_per_cell(cell)}")

    # -- directory layout ----------------------------------------------------

    def manifest(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "seed": self.plan.seed,
            "version": __version__,
            "environment": {"python": platform.python_version(), "numpy": np.__version__,
                            "platform": platform.platform()},
            "completed_cells": sorted(self.rows_by_cell()),
            "failures": self.failures,
            "wall_clock_seconds": self.wall_clock,
            "solver_stats": self.solver_stats,
            "files": ["manifest.json", "samples.csv", "summary.json", "slopes.csv"],
        }

    def write_samples(self, out: Path) -> None:
        _atomic_write(out / "samples.csv", _rows_to_csv(columns_for(self.plan), self.rows))

    def write(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.write_samples(out)
        _atomic_write(out / "summary.json", json.dumps(_jsonable(self.summary), indent=2))
        _atomic_write(out / "slopes.csv", slopes_csv(self.slopes))
        _atomic_write(out / "manifest.json", json.dumps(_jsonable(self.manifest()), indent=2))

    @classmethod
    def load(cls, out: str | Path, plan: StudyPlan | None = None) -> "StudyRecord":
        """Read an existing directory; ``plan`` (if given) must equal the recorded one."""
        out = Path(out)
        man_path, csv_path = out / "manifest.json", out / "samples.csv"
        recorded = None
        if man_path.exists():
            try:
                recorded = StudyPlan.from_dict(json.loads(man_path.read_text())["plan"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ResumeError(f"inconsistent resume state: unreadable manifest ({exc})") from exc
        if plan is not None and recorded is not None and recorded != plan:
            raise ResumeError("inconsistent resume state: recorded plan differs from the requested plan")
        plan = plan or recorded
        if plan is None:
            raise ResumeError("inconsistent resume state: no manifest and no plan")
        rows = []
        if csv_path.exists():
            text = csv_path.read_text()
            reader = csv.DictReader(io.StringIO(text))
            if reader.fieldnames != columns_for(plan):
                raise ResumeError("inconsistent resume state: samples.csv header does not match the study kind")
            for r in reader:
                if None in r.values() or None in r:
                    raise ResumeError("inconsistent resume state: truncated row in samples.csv")
                rows.append(r)
        record = cls(plan, rows)
        if man_path.exists():
            meta = json.loads(man_path.read_text())
            record.failures = meta.get("failures", [])
        record.check()
        return record


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


SLOPE_COLUMNS = ["quantity", "model", "slope", "stderr", "r2", "n_points", "status"]


def slope_entry(quantity: str, model: str, fit: LinearFit | None, status: str = "ok") -> dict:
    if fit is None:
        return {"quantity": quantity, "model": model, "slope": float("nan"), "stderr": float("nan"),
                "r2": float("nan"), "n_points": 0, "status": status, "residuals": []}
    return {"quantity": quantity, "model": model, "slope": fit.slope, "stderr": fit.stderr, "r2": fit.r2,
            "n_points": fit.n_points, "status": status, "residuals": [float(v) for v in fit.residuals]}


def slopes_csv(slopes: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SLOPE_COLUMNS)
    for s in slopes:
        w.writerow([s["quantity"], s["model"], repr(float(s["slope"])), repr(float(s["stderr"])),
                    repr(float(s["r2"])), s["n_points"], s["status"]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("HOMOG_WORKERS", "1")))
    except ValueError:
        return 1


def execute(plan: StudyPlan, out: str | Path | None = None, workers: int | None = None,
            progress: Callable[[str], None] | None = None) -> StudyRecord:
    """Run the missing cells of ``plan`` (resuming from ``out``) and summarise."""
    workers = default_workers() if workers is None else max(1, int(workers))
    out_path = Path(out) if out is not None else None
    if out_path is not None and (out_path / "samples.csv").exists():
        record = StudyRecord.load(out_path, plan)
    else:
        if out_path is not None and (out_path / "manifest.json").exists():
            StudyRecord.load(out_path, plan)
        record = StudyRecord(plan)
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    done = set(record.rows_by_cell())
    t0 = time.perf_counter()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for cell in plan.cell_ids():
            if cell in done:
                continue
            tasks = [(plan, cell, k) for k in _cell_samples(plan, cell)]
            try:
                results = list(pool.map(_cell_task, tasks)) if pool else [_cell_task(t) for t in tasks]
            except SolverError as exc:
                record.failures.append({"cell": cell, "error": str(exc), "residual": exc.residual,
                                        "iterations": exc.iterations})
                if progress:
                    progress(f"cell {cell} failed: {exc}")
                continue
            for rows in results:
                # stored exactly as samples.csv holds them, so resumed and fresh records compare equal
                record.rows.extend({k: str(v) for k, v in r.items()} for r in rows)
            if out_path is not None:
                record.write_samples(out_path)
            if progress:
                progress(f"cell {cell} done")
    finally:
        if pool:
            pool.shutdown()
    record.wall_clock += time.perf_counter() - t0
    summarize(record)
    if out_path is not None:
        record.write(out_path)
    return record


def summarize(record: StudyRecord) -> None:
    plan = record.plan
    res = [float(r["residual"]) for r in record.rows]
    its = [int(r["iterations"]) for r in record.rows]
    record.solver_stats = {"max_residual": max(res) if res else 0.0,
                           "mean_iterations": float(np.mean(its)) if its else 0.0, "n_rows": len(record.rows)}
    fn = {"variance": summarize_variance, "systematic": summarize_systematic, "gradient": summarize_gradient,
          "moments": summarize_moments, "sensitivity": summarize_sensitivity}[plan.kind]
    record.summary, record.slopes = fn(record)
    record.summary["complete"] = len(record.rows_by_cell()) == len(plan.cell_ids())


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

VARIANCE_VARIANTS = ("value_without", "value_with", "zero_order", "zero_order_raw")


def _variant_values(estimates: Sequence[EnergyEstimate], variant: str) -> np.ndarray:
    get = {
        "value_without": lambda e: e.value_without_zero_order,
        "value_with": lambda e: e.value_with_zero_order,
        "zero_order": lambda e: e.zero_order_part,
        "zero_order_raw": lambda e: e.zero_order_raw,
    }[variant]
    return np.array([get(e) for e in estimates])


def variance_table(cells: Sequence[tuple[float, float, np.ndarray]]) -> list[dict]:
    """``[(L, T, values)]`` -> mean, variance and jackknife CIs per cell."""
    out = []
    for L, T, v in cells:
        m, mci = stats.jackknife_ci(v)
        var, vci = stats.variance_with_ci(v)
        out.append({"L": L, "T": T, "n": len(v), "mean": m, "mean_ci": mci, "variance": max(var, 0.0),
                    "variance_ci": vci})
    return out


def fit_variance_slope(table: Sequence[dict], d: int, corrected: bool = False) -> tuple[LinearFit | None, str]:
    """Log-log slope of the variance against ``L``; ``corrected`` divides by ``ln(2 + sqrt(T)/L)`` (d=2)."""
    if len(table) < 3:
        return None, "insufficient points"
    if any(c["variance"] <= 0 for c in table):
        return None, "degenerate"
    pts = []
    for c in table:
        scale = np.log(2 + np.sqrt(c["T"]) / c["L"]) if (corrected and d == 2) else 1.0
        pts.append((c["L"], c["variance"] / scale, c["variance_ci"] / scale))
    try:
        return stats.fit_loglog_slope(pts), "ok"
    except ValueError as exc:
        return None, str(exc)


def summarize_variance(record: StudyRecord):
    plan = record.plan
    by_cell = record.rows_by_cell()
    summary = {"kind": "variance", "cells": {}, "variants": {}}
    slopes = []
    for variant in VARIANCE_VARIANTS:
        cells = []
        for (L, T), cid in zip(plan.variance_cells(), plan.cell_ids()):
            if cid in by_cell:
                cells.append((L, T, _variant_values(record.energy_estimates(cid), variant)))
        table = variance_table(cells)
        summary["variants"][variant] = table
        groups = {}
        for c in table:
            key = "T/L=%r" % (c["T"] / c["L"]) if not plan.T_values else "T=%r" % c["T"]
            groups.setdefault(key, []).append(c)
        for key, group in groups.items():
            for corrected in (False, True) if variant == "value_without" else (False,):
                fit, status = fit_variance_slope(group, plan.dimension, corrected)
                model = ("L^-d ln(2+sqrt(T)/L) corrected" if corrected else "power law") + f" [{key}]"
                slopes.append(slope_entry(variant, model, fit, status))
    summary["failures"] = record.failures
    return summary, slopes


def systematic_analysis(Ts: Sequence[float], values: np.ndarray, fit_count: int | None = None) -> dict:
    """Coupled analysis of ``values[k, j] = A~_{T_j}`` for sample ``k`` (all T on one realisation).

    The reference is the ``k = 2`` Richardson extrapolation from the three
    largest T; ``A_T - ref`` and the inter-T differences ``A_{2T} - A_T``
    are estimated from per-sample differences with jackknife CIs.  The slope
    of ``|A_T - ref|`` is fitted over all but the two largest T; the verdict
    is ``underpowered`` whenever a CI exceeds half the adjacent difference.
    """
    Ts = [float(t) for t in Ts]
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    w = richardson_weights(Ts, 2)
    ref_samples = values @ w
    nfit = len(Ts) - 2 if fit_count is None else fit_count
    n = values.shape[0]

    def est(v):
        if n >= 2:
            return stats.jackknife_ci(v)
        return float(v[0]), 0.0

    ref, ref_ci = est(ref_samples)
    rows = []
    for j, T in enumerate(Ts):
        a, a_ci = est(values[:, j])
        diff, diff_ci = est(values[:, j] - ref_samples)
        step, step_ci = est(values[:, j + 1] - values[:, j]) if j + 1 < len(Ts) else (float("nan"), float("nan"))
        rows.append({"T": T, "A_T": a, "A_T_ci": a_ci, "diff_to_ref": diff, "diff_ci": diff_ci,
                     "step_to_2T": step, "step_ci": step_ci})
    fitted = rows[:nfit]
    underpowered = [r["T"] for r in fitted if not r["diff_ci"] < 0.5 * abs(r["step_to_2T"])]
    verdict, fit = "ok", None
    if underpowered:
        verdict = "underpowered"
    elif any(r["diff_to_ref"] == 0 for r in fitted):
        verdict = "degenerate"
    else:
        try:
            fit = stats.fit_loglog_slope([(r["T"], abs(r["diff_to_ref"]), r["diff_ci"]) for r in fitted])
        except ValueError as exc:
            verdict = str(exc)
    return {"reference": ref, "reference_ci": ref_ci, "rows": rows, "fit_T": [r["T"] for r in fitted],
            "sign_consistent": bool(len({np.sign(r["diff_to_ref"]) for r in fitted}) == 1),
            "underpowered_T": underpowered, "verdict": verdict, "fit": fit}


def _pivot(record: StudyRecord, quantity: str | None = None) -> tuple[list[int], np.ndarray]:
    """Per-sample x per-T table of a quantity (or of ``value_without`` for energy rows)."""
    Ts = list(record.plan.T_values)
    table: dict[int, dict[float, float]] = {}
    for r in record.rows:
        if quantity is None:
            v = float(r["value_without"])
        elif r["quantity"] != quantity:
            continue
        else:
            v = float(r["value"])
        table.setdefault(int(r["sample_index"]), {})[float(r["T"])] = v
    ks = sorted(table)
    return ks, np.array([[table[k].get(t, np.nan) for t in Ts] for k in ks]).reshape(len(ks), len(Ts))


def summarize_systematic(record: StudyRecord):
    ks, values = _pivot(record)
    summary = {"kind": "systematic", "n_samples": len(ks)}
    if len(ks) < 2:
        summary["verdict"] = "no data"
        return summary, [slope_entry("|A_T - ref|", "power law", None, "no data")]
    a = systematic_analysis(record.plan.T_values, values)
    fit = a.pop("fit")
    summary.update(a)
    summary["failures"] = record.failures
    return summary, [slope_entry("|A_T - ref|", "power law", fit, a["verdict"])]


def summarize_gradient(record: StudyRecord):
    Ts = list(record.plan.T_values)
    summary = {"kind": "gradient", "rows": []}
    slopes = []
    for q in ("D", "phi_diff_sq"):
        ks, table = _pivot(record, q)
        pts = []
        for j, T in enumerate(Ts):
            col = table[:, j] if len(ks) else np.array([])
            if col.size >= 2:
                m, ci = stats.jackknife_ci(col)
            else:
                m, ci = float("nan"), float("nan")
            summary["rows"].append({"quantity": q, "T": T, "mean": m, "ci": ci, "n": int(col.size)})
            pts.append((T, m, ci))
        if all(np.isfinite(p[1]) and p[1] > 0 for p in pts):
            slopes.append(slope_entry(q, "power law", stats.fit_loglog_slope(pts)))
        else:
            slopes.append(slope_entry(q, "power law", None, "degenerate"))
    summary["failures"] = record.failures
    return summary, slopes


def moment_checks(Ts: Sequence[float], phi2: Sequence[float], grad2: Sequence[float]) -> dict:
    """Linear fit of ``moment_phi(2, T)^2`` against ``ln T`` and the spread of gradient moments."""
    fit = stats.weighted_linear_fit(np.log(Ts), np.asarray(phi2) ** 2)
    g = np.asarray(grad2, dtype=float)
    spread = float(np.max(g) / np.min(g)) if np.min(g) > 0 else float("inf")
    return {"lnT_slope": fit.slope, "lnT_slope_stderr": fit.stderr, "lnT_r2": fit.r2,
            "grad_max_over_min": spread, "fit": fit}


def summarize_moments(record: StudyRecord):
    plan = record.plan
    Ts = list(plan.T_values)
    ks, centre = _pivot(record, "phi_center")
    _, grad = _pivot(record, "grad_energy")
    summary = {"kind": "moments", "moments": []}
    slopes = []
    if len(ks) < 2:
        return summary, [slope_entry("moment_phi^2", "linear in ln T", None, "no data")]
    by_q = {}
    for q in plan.q_list:
        for j, T in enumerate(Ts):
            m = moments_from_values(centre[:, j], grad[:, j], q, T)
            summary["moments"].append(m.to_dict())
            by_q.setdefault(q, []).append(m)
    if plan.include_psi:
        _, psi = _pivot(record, "psi_center")
        summary["psi_variance"] = [{"T": T, "variance": stats.sample_variance(psi[:, j])} for j, T in enumerate(Ts)]
    if 2.0 in by_q:
        ms = by_q[2.0]
        chk = moment_checks(Ts, [m.moment_phi for m in ms], [m.moment_grad for m in ms])
        fit = chk.pop("fit")
        summary["checks"] = chk
        slopes.append(slope_entry("moment_phi(2,T)^2", "linear in ln T", fit))
    summary["failures"] = record.failures
    return summary, slopes


def summarize_sensitivity(record: StudyRecord, factor: float = 3.0):
    plan = record.plan
    per_D: dict[float, list] = {}
    for r in record.rows:
        if r["quantity"] == "ratio":
            per_D.setdefault(float(r["L"]), []).append(float(r["value"]))
    table = [{"distance": D, "p95": float(np.percentile(v, 95)), "median": float(np.median(v)), "n": len(v)}
             for D, v in sorted(per_D.items())]
    summary = {"kind": "sensitivity", "T": plan.T_values[0], "ball_radius": plan.ball_radius, "table": table}
    if table:
        p = [t["p95"] for t in table]
        spread = max(p) / min(p) if min(p) > 0 else float("inf")
        summary["p95_max_over_min"] = spread
        summary["stable"] = bool(spread <= factor)
        summary["far_not_larger"] = bool(p[-1] <= factor * p[0])
    summary["failures"] = record.failures
    return summary, []


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _with_kind(plan: StudyPlan, kind: str) -> StudyPlan:
    return plan if plan.kind == kind else replace(plan, kind=kind)


def run_variance_study(plan: StudyPlan, out=None, workers=None, progress=None) -> StudyRecord:
    return execute(_with_kind(plan, "variance"), out, workers, progress)


def run_systematic_study(plan: StudyPlan, out=None, workers=None, progress=None) -> StudyRecord:
    return execute(_with_kind(plan, "systematic"), out, workers, progress)


def run_gradient_convergence_study(plan: StudyPlan, out=None, workers=None, progress=None) -> StudyRecord:
    return execute(_with_kind(plan, "gradient"), out, workers, progress)


def run_moment_study(plan: StudyPlan, q_list: Sequence[float] | None = None, out=None, workers=None,
                     progress=None) -> StudyRecord:
    p = _with_kind(plan, "moments")
    if q_list is not None:
        p = replace(p, q_list=tuple(float(q) for q in q_list))
    return execute(p, out, workers, progress)


def run_sensitivity_probe(plan: StudyPlan, n_probe: int | None = None, out=None, workers=None,
                          progress=None) -> StudyRecord:
    p = _with_kind(plan, "sensitivity")
    if n_probe is not None:
        p = replace(p, n_samples=int(n_probe))
    return execute(p, out, workers, progress)


RUNNERS = {
    "variance": run_variance_study,
    "systematic": run_systematic_study,
    "gradient": run_gradient_convergence_study,
    "moments": run_moment_study,
    "sensitivity": run_sensitivity_probe,
}

