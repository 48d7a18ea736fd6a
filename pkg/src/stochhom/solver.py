"""Massive elliptic operator ``T^-1 u - div(A grad u)`` on a box with Dirichlet data.

Cell-centred finite volumes.  On a face normal to axis ``i`` the flux is
``F_i = sum_j A_face[i, j] g_j`` where ``g_i`` is the normal difference and,
for ``j != i``, ``g_j`` is the mean of the central ``j``-differences of the
two adjacent cells.  ``A_face`` is the (matrix) harmonic or arithmetic mean of
the adjacent cell tensors; boundary faces use the interior cell tensor and the
ghost value 0.  For diagonal tensors this is the two-point flux scheme and the
operator is symmetric positive definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    CoefficientField,
    FaceField,
    GridFunction,
    _take,
    center_index,
    central_difference,
    face_difference,
    face_divergence,
    face_mean,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAXITER = 5000


class SolverError(RuntimeError):
    """Non-convergence; carries the final relative residual."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IndefiniteOperatorError(SolverError):
    pass


# ---------------------------------------------------------------------------
# face tensors and fluxes
# ---------------------------------------------------------------------------


def _harmonic(a: np.ndarray, b: np.ndarray, diagonal: bool) -> np.ndarray:
    if diagonal:
        out = np.zeros_like(a)
        d = a.shape[-1]
        ad = np.diagonal(a, axis1=-2, axis2=-1)
        bd = np.diagonal(b, axis1=-2, axis2=-1)
        h = 2.0 * ad * bd / (ad + bd)
        out[..., range(d), range(d)] = h
        return out
    return 2.0 * np.linalg.inv(np.linalg.inv(a) + np.linalg.inv(b))


def face_tensors(field: CoefficientField, averaging: str = "harmonic") -> list[np.ndarray]:
    """Face tensors per axis, shape ``face_shape + (d, d)``."""
    if averaging not in ("harmonic", "arithmetic"):
        raise ValueError(f"unknown averaging {averaging!r}")
    cells = field.cells
    diagonal = field.is_diagonal()
    out = []
    for i in range(field.dimension):
        lo = _take(cells, i, slice(None, -1))
        hi = _take(cells, i, slice(1, None))
        inner = _harmonic(lo, hi, diagonal) if averaging == "harmonic" else 0.5 * (lo + hi)
        first = _take(cells, i, slice(0, 1))
        last = _take(cells, i, slice(-1, None))
        out.append(np.concatenate([first, inner, last], axis=i))
    return out


@dataclass(eq=False)
class OperatorSpec:
    """``T^-1 - div A grad`` with Dirichlet data; ``transpose_flag`` uses ``A^*``."""

    field: CoefficientField
    massive: float
    transpose_flag: bool = False
    averaging: str = "harmonic"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.massive > 0):
            raise ValueError("T must be positive")

    @property
    def T(self) -> float:
        return self.massive

    @property
    def effective_field(self) -> CoefficientField:
        if "eff" not in self._cache:
            self._cache["eff"] = self.field.transpose() if self.transpose_flag else self.field
        return self._cache["eff"]

    @property
    def faces(self) -> list[np.ndarray]:
        if "faces" not in self._cache:
            self._cache["faces"] = face_tensors(self.effective_field, self.averaging)
        return self._cache["faces"]

    def adjoint(self) -> "OperatorSpec":
        other = OperatorSpec(self.field, self.massive, not self.transpose_flag, self.averaging)
        if self.field.is_symmetric():
            # A* = A: share faces, matrix and preconditioner
            other._cache = self._cache
        return other

    def with_massive(self, T: float) -> "OperatorSpec":
        return OperatorSpec(self.field, T, self.transpose_flag, self.averaging)

    @property
    def shape(self):
        return self.field.shape

    @property
    def spacing(self) -> float:
        return self.field.spacing


def flux(spec: OperatorSpec, u: np.ndarray | None, xi=None) -> list[np.ndarray]:
    """Face fluxes ``A_face (xi + grad u)``; ``u=None`` means ``u = 0``."""
    h = spec.spacing
    d = spec.field.dimension
    faces = spec.faces
    xi = np.zeros(d) if xi is None else np.asarray(xi, dtype=float)
    diagonal = spec.field.is_diagonal()
    central = None
    if u is not None and not diagonal:
        central = [central_difference(u, j, h) for j in range(d)]
    out = []
    for i in range(d):
        Fi = np.zeros(faces[i].shape[:-2])
        for j in range(d):
            a = faces[i][..., i, j]
            if j != i and diagonal:
                continue
            if u is None:
                g = xi[j]
            elif j == i:
                g = face_difference(u, i, h) + xi[j]
            else:
                g = face_mean(central[j], i) + xi[j]
            Fi = Fi + a * g
        out.append(Fi)
    return out


def apply_operator(spec: OperatorSpec, u: GridFunction) -> GridFunction:
    """Matrix-free ``T^-1 u - div(A_face grad u)``."""
    if u.shape != spec.shape:
        raise ValueError("grid function does not match the operator")
    F = flux(spec, u.values)
    return u.like(u.values / spec.massive - face_divergence(F, spec.spacing))


# ---------------------------------------------------------------------------
# sparse assembly
# ---------------------------------------------------------------------------


def _kron_axis(op1d: sp.spmatrix, shape, axis: int, rows_shape=None) -> sp.csr_matrix:
    mats = []
    for k, n in enumerate(shape):
        mats.append(op1d if k == axis else sp.identity(n, format="csr"))
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _diff1d(n: int, h: float) -> sp.csr_matrix:
    # (n+1) x n, ghost value 0 on both ends
    main = np.ones(n)
    return sp.diags([-main, main], [-1, 0], shape=(n + 1, n), format="csr") / h


def _mean1d(n: int) -> sp.csr_matrix:
    main = np.full(n, 0.5)
    return sp.diags([main, main], [-1, 0], shape=(n + 1, n), format="csr")


def _central1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([np.full(n - 1, -0.5), np.full(n - 1, 0.5)], [-1, 1], shape=(n, n), format="csr") / h


def assemble(spec: OperatorSpec) -> sp.csr_matrix:
    """Sparse matrix of the operator in C (row-major) cell order."""
    if "matrix" in spec._cache:
        return spec._cache["matrix"]
    shape = spec.shape
    d = len(shape)
    h = spec.spacing
    N = int(np.prod(shape))
    faces = spec.faces
    diagonal = spec.field.is_diagonal()
    D = [_kron_axis(_diff1d(n, h), shape, i) for i, n in enumerate(shape)]
    K = sp.identity(N, format="csr") / spec.massive
    for i in range(d):
        F = sp.diags(faces[i][..., i, i].ravel()) @ D[i]
        if not diagonal:
            M = _kron_axis(_mean1d(shape[i]), shape, i)
            for j in range(d):
                if j == i:
                    continue
                C = _kron_axis(_central1d(shape[j], h), shape, j)
                F = F + sp.diags(faces[i][..., i, j].ravel()) @ (M @ C)
        K = K + D[i].T @ F
    K = K.tocsr()
    K.sum_duplicates()
    spec._cache["matrix"] = K
    return K


def operator_is_symmetric(spec: OperatorSpec) -> bool:
    if "symmetric" not in spec._cache:
        if spec.field.is_diagonal():
            sym = True
        else:
            K = assemble(spec)
            diff = abs(K - K.T).max() if K.nnz else 0.0
            sym = bool(diff <= 1e-13 * abs(K).max())
        spec._cache["symmetric"] = sym
    return spec._cache["symmetric"]


# ---------------------------------------------------------------------------
# Krylov solvers
# ---------------------------------------------------------------------------


def pcg(matvec, b: np.ndarray, tol: float, maxiter: int = DEFAULT_MAXITER, precond=None, x0=None):
    """Preconditioned conjugate gradients; stops on ``|r| <= tol |b|``.

    Returns ``(x, iterations, relative_residual)``.
    """
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    r = b - matvec(x) if x0 is not None else b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > tol * bnorm:
        if it >= maxiter:
            raise SolverError(f"CG did not converge in {maxiter} iterations", rnorm / bnorm, it)
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteOperatorError("operator is not positive definite (ellipticity violated upstream?)", rnorm / bnorm, it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        it += 1
        z = precond(r) if precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, rnorm / bnorm


@dataclass
class SolveInfo:
    residual: float
    iterations: int
    method: str


def _preconditioner(spec: OperatorSpec):
    if "amg" not in spec._cache:
        import pyamg

        K = assemble(spec)
        # pyamg draws the smoother's spectral-radius start vector from the
        # global RNG; pin it so the preconditioner depends on K alone
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(K, symmetry="symmetric")
        finally:
            np.random.set_state(state)
        spec._cache["amg"] = ml.aspreconditioner(cycle="V")
    return spec._cache["amg"]


def solve_linear(spec: OperatorSpec, b: np.ndarray, tol: float = DEFAULT_TOL, method: str = "auto",
                 maxiter: int = DEFAULT_MAXITER) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``K x = b`` for an array ``b`` on the operator's grid.

    ``method``: ``"auto"`` (AMG-preconditioned CG if symmetric, CG on the
    normal equations otherwise), ``"cg"``, ``"cgnr"`` or ``"direct"``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    shape = b.shape
    rhs = np.asarray(b, dtype=float).ravel()
    K = assemble(spec)
    symmetric = operator_is_symmetric(spec)
    if method == "auto":
        method = "cg" if symmetric else "cgnr"
    if method == "cg" and not symmetric:
        raise ValueError("plain CG needs a symmetric operator")
    if method == "direct":
        if "lu" not in spec._cache:
            spec._cache["lu"] = spla.splu(K.tocsc())
        x = spec._cache["lu"].solve(rhs) if rhs.any() else np.zeros_like(rhs)
        it = 1
    elif method == "cg":
        precond = _preconditioner(spec) if K.shape[0] > 64 else None
        x, it, _ = pcg(lambda v: K @ v, rhs, tol, maxiter, precond)
    elif method == "cgnr":
        KT = K.T.tocsr()
        diag = np.asarray(K.multiply(K).sum(axis=0)).ravel()
        x, it, _ = pcg(lambda v: KT @ (K @ v), KT @ rhs, tol * 1e-2, maxiter * 4, lambda r: r / diag)
    else:
        raise ValueError(f"unknown method {method!r}")
    bnorm = np.linalg.norm(rhs)
    res = float(np.linalg.norm(rhs - K @ x) / bnorm) if bnorm > 0 else 0.0
    if res > tol:
        raise SolverError(f"{method} solve ended with relative residual {res:.3e} > {tol:.1e}", res, it)
    return x.reshape(shape), SolveInfo(res, it, method)


# ---------------------------------------------------------------------------
# correctors, psi, Green columns
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CorrectorSolution:
    phi: GridFunction
    grad_phi: FaceField
    xi: np.ndarray
    T: float
    residual_norm: float
    iterations: int
    domain_radius: float
    operator: OperatorSpec
    energy_defect: float = 0.0
    method: str = "cg"


def _unit(xi, d: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (d,):
        raise ValueError(f"direction must have {d} components")
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    return xi


def corrector_rhs(spec: OperatorSpec, xi) -> np.ndarray:
    """``div(A_face xi)`` on cells; zero for constant tensors."""
    F = flux(spec, None, xi)
    return face_divergence(F, spec.spacing)


def energy_terms(spec: OperatorSpec, phi: np.ndarray, xi) -> tuple[float, float, float]:
    """``(T^-1 sum phi^2 h^d, sum grad phi . A grad phi h^d, -sum grad phi . A xi h^d)``."""
    h = spec.spacing
    vol = h ** spec.field.dimension
    F_phi = flux(spec, phi)
    F_xi = flux(spec, None, xi)
    g = [face_difference(phi, i, h) for i in range(phi.ndim)]
    zero = float(np.sum(phi * phi)) / spec.massive * vol
    quad = float(sum(np.sum(gi * Fi) for gi, Fi in zip(g, F_phi))) * vol
    lin = -float(sum(np.sum(gi * Fi) for gi, Fi in zip(g, F_xi))) * vol
    return zero, quad, lin


def solve_modified_corrector(spec: OperatorSpec, xi, tol: float = DEFAULT_TOL, method: str = "auto") -> CorrectorSolution:
    """Solve ``T^-1 phi - div A(xi + grad phi) = 0`` with ``phi = 0`` outside the box."""
    field = spec.field
    xi = _unit(xi, field.dimension)
    rhs = corrector_rhs(spec, xi)
    phi, info = solve_linear(spec, rhs, tol, method)
    zero, quad, lin = energy_terms(spec, phi, xi)
    vol = spec.spacing ** field.dimension
    scale = np.linalg.norm(phi) * np.linalg.norm(rhs) * vol
    defect = abs(zero + quad - lin)
    if defect > 10 * tol * scale + 1e-14 * max(abs(lin), 1.0):
        raise SolverError(f"energy identity violated by {defect:.3e}", info.residual, info.iterations)
    u = GridFunction(field.box, field.spacing, phi)
    from .grid import gradient

    radius = 0.5 * float(np.min(field.box.edges))
    return CorrectorSolution(u, gradient(u), xi, spec.massive, info.residual, info.iterations, radius, spec,
                             defect, info.method)


def solve_adjoint_corrector(spec: OperatorSpec, xi_prime, tol: float = DEFAULT_TOL, method: str = "auto") -> CorrectorSolution:
    """Modified corrector of the transposed field ``A^*`` in direction ``xi_prime``."""
    return solve_modified_corrector(spec.adjoint(), xi_prime, tol, method)


def solve_psi(spec: OperatorSpec, phi: CorrectorSolution, tol: float = DEFAULT_TOL, method: str = "auto") -> GridFunction:
    """``T^-1 psi - div A grad psi = phi_T``; equals ``T^2 d phi_T / dT``."""
    if phi.phi.shape != spec.shape or phi.T != spec.massive:
        raise ValueError("corrector was not solved with this operator")
    psi, _ = solve_linear(spec, phi.phi.values, tol, method)
    return phi.phi.like(psi)


def solve_green_column(spec: OperatorSpec, source_cell=None, tol: float = DEFAULT_TOL, method: str = "auto") -> GridFunction:
    """Discrete ``G_T(., y)``: right-hand side ``h^-d`` at the source cell."""
    shape = spec.shape
    source = center_index(shape) if source_cell is None else tuple(int(k) for k in source_cell)
    if len(source) != len(shape) or any(not (0 < k < n - 1) for k, n in zip(source, shape)):
        raise ValueError("source cell must be strictly interior")
    rhs = np.zeros(shape)
    rhs[source] = spec.spacing ** (-len(shape))
    G, info = solve_linear(spec, rhs, tol, method)
    return GridFunction(spec.field.box, spec.spacing, G)
