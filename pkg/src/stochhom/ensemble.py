"""Stationary random coefficient ensembles and their reproducible realisations.

Randomness is generated per block of ``BLOCK`` x ... x ``BLOCK`` length units
with a generator seeded from ``(master_seed, sample_index, stream_tag,
block index)``.  A realisation therefore does not depend on the box it is
requested on: the field on a larger box restricts exactly to the field on a
smaller one, and samples can be drawn in any order or concurrently.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .grid import Box, CoefficientField, cell_centers, grid_shape, tensor_ellipticity_bounds

BLOCK = 8
MAX_EXPECTED_POINTS = 1e9
_TAGS = {"poisson": 1, "checkerboard": 2}


class EnsembleKind(str, enum.Enum):
    POISSON = "PoissonInclusion"
    CHECKERBOARD = "IidCheckerboard"
    CONSTANT = "ConstantMatrix"
    LAMINATE = "Laminate"


@dataclass(frozen=True)
class EnsembleSpec:
    """Full description of a random coefficient law.

    ``cell_values``/``probabilities`` are the candidate tensors of the iid
    checkerboard (and the single tensor of ``ConstantMatrix``).  For the
    laminate, ``cell_values`` lists the band values in order (default
    ``(contrast, 1)``) each of width ``band_width`` along ``x_1``.
    """

    kind: EnsembleKind = EnsembleKind.POISSON
    dimension: int = 2
    contrast: float = 0.25
    inclusion_radius: float = 1.0
    intensity: float = 1.0
    cell_values: tuple = ()
    probabilities: tuple = ()
    band_width: float = 0.5
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not 0 < self.contrast <= 1:
            raise ValueError("contrast must lie in (0, 1]")
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        if not self.inclusion_radius > 0:
            raise ValueError("inclusion radius must be positive")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        values = tuple(_as_tensor(v, self.dimension) for v in self.cell_values)
        object.__setattr__(self, "cell_values", tuple(tuple(map(tuple, v)) for v in values))
        probs = tuple(float(p) for p in self.probabilities)
        if self.kind is EnsembleKind.CHECKERBOARD:
            if not values:
                raise ValueError("IidCheckerboard needs cell_values")
            if not probs:
                probs = (1.0 / len(values),) * len(values)
            if len(probs) != len(values) or min(probs) < 0 or abs(sum(probs) - 1) > 1e-12:
                raise ValueError("probabilities must be nonnegative, match cell_values and sum to 1")
        if self.kind is EnsembleKind.CONSTANT and len(values) > 1:
            raise ValueError("ConstantMatrix takes a single tensor")
        object.__setattr__(self, "probabilities", probs)
        for v in self.candidate_tensors():
            lo, hi = tensor_ellipticity_bounds(v)
            if lo < self.contrast - 1e-12 or hi > 1 + 1e-12:
                raise ValueError(f"candidate tensor {v.tolist()} is not bounded and elliptic with lambda={self.contrast}")

    def candidate_tensors(self) -> list[np.ndarray]:
        d = self.dimension
        if self.kind is EnsembleKind.POISSON:
            return [self.contrast * np.eye(d), np.eye(d)]
        if self.kind is EnsembleKind.CONSTANT:
            return [np.asarray(self.cell_values[0]) if self.cell_values else np.eye(d)]
        if self.kind is EnsembleKind.LAMINATE and not self.cell_values:
            return [self.contrast * np.eye(d), np.eye(d)]
        return [np.asarray(v, dtype=float) for v in self.cell_values]

    def with_seed(self, seed: int) -> "EnsembleSpec":
        return dataclasses.replace(self, master_seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "dimension": self.dimension,
            "contrast": self.contrast,
            "inclusion_radius": self.inclusion_radius,
            "intensity": self.intensity,
            "cell_values": json.dumps([list(map(list, v)) for v in self.cell_values]),
            "probabilities": json.dumps(list(self.probabilities)),
            "band_width": self.band_width,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleSpec":
        kw = {}
        conv = {
            "kind": str,
            "dimension": int,
            "contrast": float,
            "inclusion_radius": float,
            "intensity": float,
            "band_width": float,
            "master_seed": int,
        }
        for key, value in data.items():
            if key in conv:
                kw[key] = conv[key](value)
            elif key in ("cell_values", "probabilities"):
                kw[key] = tuple(json.loads(value) if isinstance(value, str) else value)
            else:
                raise KeyError(f"unknown ensemble key {key!r}")
        return cls(**kw)


def _as_tensor(v, d: int) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(d)
    if a.shape != (d, d):
        raise ValueError(f"tensor of shape {a.shape} in a {d}-d ensemble")
    return a


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    points: np.ndarray
    extended_box: Box

    def __len__(self):
        return len(self.points)


def _block_rng(spec: EnsembleSpec, sample_index: int, tag: str, block) -> np.random.Generator:
    key = (int(sample_index), _TAGS[tag]) + tuple(int(b) + 2**31 for b in block)
    ss = np.random.SeedSequence(entropy=int(spec.master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def _blocks_covering(box: Box, block: float):
    lo = np.floor(np.asarray(box.lower) / block).astype(int)
    hi = np.ceil(np.asarray(box.upper) / block).astype(int)
    hi = np.maximum(hi, lo + 1)
    return itertools.product(*[range(a, b) for a, b in zip(lo, hi)])


def sample_poisson_points(spec: EnsembleSpec, box: Box, sample_index: int) -> PointConfiguration:
    """Poisson points on ``box`` enlarged by one inclusion radius per side."""
    if spec.kind is not EnsembleKind.POISSON:
        raise ValueError("sample_poisson_points needs a PoissonInclusion ensemble")
    if box.dimension != spec.dimension:
        raise ValueError("box dimension does not match the ensemble")
    ext = box.expanded(spec.inclusion_radius)
    if spec.intensity * ext.volume > MAX_EXPECTED_POINTS:
        raise ValueError("expected point count exceeds the resource guard")
    if box.volume == 0.0:
        return PointConfiguration(np.zeros((0, spec.dimension)), ext)
    d = spec.dimension
    found = []
    for block in _blocks_covering(ext, BLOCK):
        rng = _block_rng(spec, sample_index, "poisson", block)
        n = rng.poisson(spec.intensity * BLOCK**d)
        pts = (np.asarray(block, dtype=float) + rng.random((n, d))) * BLOCK
        inside = np.all((pts >= ext.lower) & (pts < ext.upper), axis=1)
        found.append(pts[inside])
    return PointConfiguration(np.concatenate(found, axis=0), ext)


def _checkerboard_labels(spec: EnsembleSpec, cells: np.ndarray, sample_index: int) -> np.ndarray:
    """Category of each unit cell given by integer coordinates ``cells`` (n, d)."""
    d = spec.dimension
    labels = np.empty(len(cells), dtype=int)
    blocks = np.floor_divide(cells, BLOCK)
    cum = np.cumsum(spec.probabilities)
    for block in np.unique(blocks, axis=0):
        rng = _block_rng(spec, sample_index, "checkerboard", block)
        draws = np.searchsorted(cum, rng.random((BLOCK,) * d), side="right")
        draws = np.minimum(draws, len(cum) - 1)
        sel = np.all(blocks == block, axis=1)
        local = cells[sel] - block * BLOCK
        labels[sel] = draws[tuple(local.T)]
    return labels


def evaluate_field(spec: EnsembleSpec, points: np.ndarray, sample_index: int, box: Box | None = None) -> np.ndarray:
    """Coefficient tensors at arbitrary positions ``points`` of shape (n, d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    eye = np.eye(d)
    if spec.kind is EnsembleKind.CONSTANT:
        return np.broadcast_to(spec.candidate_tensors()[0], (n, d, d)).copy()
    if spec.kind is EnsembleKind.LAMINATE:
        values = spec.candidate_tensors()
        band = np.floor(points[:, 0] / spec.band_width).astype(int) % len(values)
        return np.stack(values)[band]
    if spec.kind is EnsembleKind.CHECKERBOARD:
        cells = np.floor(points).astype(int)
        labels = _checkerboard_labels(spec, cells, sample_index)
        return np.stack(spec.candidate_tensors())[labels]
    if box is None:
        box = Box(points.min(axis=0), points.max(axis=0))
    conf = sample_poisson_points(spec, box, sample_index)
    inside = np.zeros(n, dtype=bool)
    if len(conf):
        dist, _ = cKDTree(conf.points).query(points, distance_upper_bound=spec.inclusion_radius)
        inside = dist < spec.inclusion_radius
    scale = np.where(inside, spec.contrast, 1.0)
    return scale[:, None, None] * eye


def realize_field(spec: EnsembleSpec, box: Box, spacing: float, sample_index: int) -> CoefficientField:
    """Cell-centre sampling of one realisation on ``box``."""
    if box.dimension != spec.dimension:
        raise ValueError("box dimension does not match the ensemble")
    shape = grid_shape(box, spacing)
    if spacing > spec.inclusion_radius / 2 + 1e-12:
        raise ValueError("spacing must not exceed half the inclusion radius")
    d = spec.dimension
    if spec.kind is EnsembleKind.CONSTANT:
        return CoefficientField.constant(box, spacing, spec.candidate_tensors()[0])
    centers = cell_centers(box, spacing)
    if spec.kind is EnsembleKind.LAMINATE:
        t = evaluate_field(spec, np.stack([centers[0]] + [np.zeros_like(centers[0])] * (d - 1), axis=1), sample_index)
        cells = np.broadcast_to(t.reshape((shape[0],) + (1,) * (d - 1) + (d, d)), shape + (d, d))
        return CoefficientField(box, spacing, cells.copy())
    mesh = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1).reshape(-1, d)
    if spec.kind is EnsembleKind.CHECKERBOARD:
        # evaluate once per unit cell then broadcast to the grid
        unit = np.floor(mesh).astype(int)
        uniq, inv = np.unique(unit, axis=0, return_inverse=True)
        labels = _checkerboard_labels(spec, uniq, sample_index)[inv.ravel()]
        t = np.stack(spec.candidate_tensors())[labels]
        return CoefficientField(box, spacing, t.reshape(shape + (d, d)))
    t = evaluate_field(spec, mesh, sample_index, box=box)
    return CoefficientField(box, spacing, t.reshape(shape + (d, d)))


@dataclass(frozen=True)
class StationarityReport:
    statistic: float
    pvalue: float
    n_samples: int
    shift: tuple
    passed: bool


def empirical_stationarity_check(spec: EnsembleSpec, n_samples: int, shift, x0=None) -> StationarityReport:
    """Two-sample KS test between ``A_11(x0)`` and ``A_11(x0 + shift)`` across samples."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (spec.dimension,) or np.any(shift != np.round(shift)):
        raise ValueError("shift must be an integer lattice vector")
    # x0 sits strictly inside a unit cell so both points are unambiguous
    x0 = np.full(spec.dimension, 0.3) if x0 is None else np.asarray(x0, dtype=float)
    pts = np.stack([x0, x0 + shift])
    box = Box(pts.min(axis=0) - 0.5, pts.max(axis=0) + 0.5)
    a = np.empty(n_samples)
    b = np.empty(n_samples)
    for k in range(n_samples):
        t = evaluate_field(spec, pts, k, box=box)
        a[k], b[k] = t[0, 0, 0], t[1, 0, 0]
    if np.array_equal(np.unique(a), np.unique(b)) and len(np.unique(a)) == 1:
        stat, p = 0.0, 1.0
    else:
        res = stats.ks_2samp(a, b)
        stat, p = float(res.statistic), float(res.pvalue)
    return StationarityReport(stat, p, n_samples, tuple(shift.tolist()), p > 0.01)
