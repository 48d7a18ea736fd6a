"""Structured cell-centred grids: coefficient fields, grid functions, face fields.

Cells are indexed by a multi-index ``k`` with centres at
``lower + (k + 1/2) * h``.  Face arrays for axis ``i`` carry one extra entry
along axis ``i``; face ``k`` sits between cells ``k - 1`` and ``k``.  Values
outside the box are the homogeneous Dirichlet ghost value 0.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if any(b < a for a, b in zip(lo, hi)):
            raise ValueError("box upper corner lies below lower corner")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def centered(cls, half_width: float, d: int) -> "Box":
        return cls((-half_width,) * d, (half_width,) * d)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def edges(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.edges))

    def expanded(self, margin: float) -> "Box":
        return Box(tuple(a - margin for a in self.lower), tuple(b + margin for b in self.upper))


def grid_shape(box: Box, spacing: float) -> tuple[int, ...]:
    """Number of cells per axis; raises if ``spacing`` does not divide the edges."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    n = box.edges / spacing
    shape = np.rint(n).astype(int)
    if np.any(np.abs(n - shape) > 1e-9 * np.maximum(1.0, n)) or np.any(shape < 1):
        raise ValueError(f"spacing {spacing} does not divide box edges {tuple(box.edges)}")
    return tuple(int(s) for s in shape)


def cell_centers(box: Box, spacing: float) -> list[np.ndarray]:
    """Per-axis cell-centre coordinates."""
    shape = grid_shape(box, spacing)
    return [box.lower[i] + (np.arange(n) + 0.5) * spacing for i, n in enumerate(shape)]


def centered_box(radius: float, spacing: float, d: int) -> Box:
    """Smallest box ``[-r, r]^d`` with ``r >= radius`` and a cell centred at the origin."""
    m = int(np.ceil(radius / spacing - 0.5 - 1e-12))
    return Box.centered((m + 0.5) * spacing, d)


def center_index(shape: Sequence[int]) -> tuple[int, ...]:
    return tuple(n // 2 for n in shape)


def radial_distance(box: Box, spacing: float, origin: Sequence[float] | None = None) -> np.ndarray:
    """``|x - origin|`` at every cell centre."""
    centers = cell_centers(box, spacing)
    origin = np.zeros(len(centers)) if origin is None else np.asarray(origin, dtype=float)
    grids = np.meshgrid(*[c - o for c, o in zip(centers, origin)], indexing="ij")
    return np.sqrt(sum(g * g for g in grids))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """A realisation of the coefficient field: one full ``d x d`` tensor per cell."""

    box: Box
    spacing: float
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=float)
        d = self.box.dimension
        shape = grid_shape(self.box, self.spacing)
        if cells.shape != shape + (d, d):
            raise ValueError(f"cells shape {cells.shape} != {shape + (d, d)}")
        if not np.all(np.isfinite(cells)):
            raise ValueError("coefficient field has non-finite entries")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def scalar(cls, box: Box, spacing: float, values: np.ndarray) -> "CoefficientField":
        values = np.asarray(values, dtype=float)
        d = box.dimension
        return cls(box, spacing, values[..., None, None] * np.eye(d))

    @classmethod
    def constant(cls, box: Box, spacing: float, tensor) -> "CoefficientField":
        tensor = np.asarray(tensor, dtype=float)
        shape = grid_shape(box, spacing)
        return cls(box, spacing, np.broadcast_to(tensor, shape + tensor.shape).copy())

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells.shape[:-2]

    def transpose(self) -> "CoefficientField":
        return CoefficientField(self.box, self.spacing, np.swapaxes(self.cells, -1, -2).copy())

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.cells, np.swapaxes(self.cells, -1, -2)))

    def is_diagonal(self) -> bool:
        d = self.dimension
        off = self.cells * (1.0 - np.eye(d))
        return not np.any(off)

    def ellipticity_bounds(self) -> tuple[float, float]:
        """(min eigenvalue of the symmetric part, max operator norm) over all cells."""
        flat = self.cells.reshape(-1, self.dimension, self.dimension)
        return tensor_ellipticity_bounds(flat)

    def check_ellipticity(self, contrast: float, slack: float = 1e-12) -> None:
        lo, hi = self.ellipticity_bounds()
        if lo < contrast - slack or hi > 1.0 + slack:
            raise ValueError(f"field violates ellipticity: min sym eig {lo}, max norm {hi}, lambda {contrast}")

    def digest(self) -> str:
        import hashlib

        hsh = hashlib.sha256()
        hsh.update(np.asarray(self.box.lower + self.box.upper + (self.spacing,)).tobytes())
        hsh.update(np.ascontiguousarray(self.cells).tobytes())
        return hsh.hexdigest()


def tensor_ellipticity_bounds(tensors: np.ndarray) -> tuple[float, float]:
    tensors = np.asarray(tensors, dtype=float)
    if tensors.ndim == 2:
        tensors = tensors[None]
    # few distinct values in practice; dedupe before the eigen-solves
    uniq = np.unique(tensors.reshape(len(tensors), -1), axis=0).reshape(-1, *tensors.shape[1:])
    sym = 0.5 * (uniq + np.swapaxes(uniq, -1, -2))
    lo = float(np.linalg.eigvalsh(sym)[:, 0].min())
    hi = float(np.linalg.norm(uniq, ord=2, axis=(-2, -1)).max())
    return lo, hi


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar values at cell centres."""

    box: Box
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != grid_shape(self.box, self.spacing):
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    def like(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.box, self.spacing, values)


@dataclass(frozen=True, eq=False)
class FaceField:
    """Face-centred values; ``components[i]`` lives on the faces normal to axis ``i``."""

    box: Box
    spacing: float
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        shape = grid_shape(self.box, self.spacing)
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(comps) != len(shape):
            raise ValueError("one component per axis required")
        for i, c in enumerate(comps):
            if c.shape != face_shape(shape, i):
                raise ValueError(f"component {i} has shape {c.shape}, expected {face_shape(shape, i)}")
        object.__setattr__(self, "components", comps)

    @property
    def dimension(self) -> int:
        return len(self.components)

    def dot(self, other: "FaceField") -> float:
        vol = self.spacing ** self.dimension
        return float(sum(np.vdot(a, b) for a, b in zip(self.components, other.components)) * vol)


def face_shape(shape: Sequence[int], axis: int) -> tuple[int, ...]:
    s = list(shape)
    s[axis] += 1
    return tuple(s)


def _pad_axis(a: np.ndarray, axis: int) -> np.ndarray:
    width = [(0, 0)] * a.ndim
    width[axis] = (1, 1)
    return np.pad(a, width)


def _take(a: np.ndarray, axis: int, sl: slice) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = sl
    return a[tuple(idx)]


def face_difference(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Normal differences on all faces of ``axis`` with ghost value 0."""
    p = _pad_axis(values, axis)
    return np.diff(p, axis=axis) / spacing


def face_mean(values: np.ndarray, axis: int) -> np.ndarray:
    """Average of the two cells adjoining each face (ghost value 0)."""
    p = _pad_axis(values, axis)
    return 0.5 * (_take(p, axis, slice(None, -1)) + _take(p, axis, slice(1, None)))


def central_difference(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Cell-centred central difference with ghost value 0."""
    p = _pad_axis(values, axis)
    return (_take(p, axis, slice(2, None)) - _take(p, axis, slice(None, -2))) / (2.0 * spacing)


def face_divergence(components: Sequence[np.ndarray], spacing: float) -> np.ndarray:
    return sum(np.diff(c, axis=i) for i, c in enumerate(components)) / spacing


def gradient(u: GridFunction) -> FaceField:
    """Face gradient; boundary faces see the Dirichlet ghost value 0."""
    if min(u.shape) < 2:
        raise ValueError("gradient needs at least 2 cells per axis")
    return FaceField(u.box, u.spacing, tuple(face_difference(u.values, i, u.spacing) for i in range(u.dimension)))


def divergence(g: FaceField) -> GridFunction:
    return GridFunction(g.box, g.spacing, face_divergence(g.components, g.spacing))


def cell_gradient(g: FaceField) -> np.ndarray:
    """Per-cell vectors, shape ``grid + (d,)``: mean of the two bounding faces per axis."""
    out = []
    for i, c in enumerate(g.components):
        out.append(0.5 * (_take(c, i, slice(None, -1)) + _take(c, i, slice(1, None))))
    return np.stack(out, axis=-1)


@dataclass(frozen=True, eq=False)
class AveragingMask:
    """Discrete averaging function supported in the open ball of radius ``radius``.

    ``weights`` are the cell values of ``eta_L``; they sum to ``h**-d``.
    """

    radius: float
    weights: GridFunction

    @property
    def face_weights(self) -> tuple[np.ndarray, ...]:
        """Face values as the mean of adjacent cells; each axis again sums to ``h**-d``."""
        w = self.weights.values
        return tuple(face_mean(w, i) for i in range(w.ndim))


def make_mask(box: Box, spacing: float, radius: float) -> AveragingMask:
    """``c cos^2(pi |x| / 2L)`` on ``|x| < L``, normalised so that ``sum eta h^d = 1``."""
    if radius <= 0:
        raise ValueError("mask radius must be positive")
    d = box.dimension
    if any(a > -radius for a in box.lower) or any(b < radius for b in box.upper):
        raise ValueError(f"mask support B_{radius} overflows the box")
    r = radial_distance(box, spacing)
    eta = np.where(r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)
    total = eta.sum() * spacing ** d
    if total <= 0:
        raise ValueError("mask radius too small for the grid")
    return AveragingMask(radius, GridFunction(box, spacing, eta / total))


def masked_average(w: GridFunction, mask: AveragingMask) -> float:
    """``sum w * eta_L * h^d``."""
    if w.values.shape != mask.weights.values.shape or w.box != mask.weights.box:
        raise ValueError("mask support does not match the grid function's box")
    return float(np.sum(w.values * mask.weights.values) * w.cell_volume)


def masked_face_average(g: FaceField, mask: AveragingMask) -> float:
    if g.box != mask.weights.box:
        raise ValueError("mask support does not match the face field's box")
    vol = g.spacing ** g.dimension
    return float(sum(np.sum(c * fw) for c, fw in zip(g.components, mask.face_weights)) * vol)


# ---------------------------------------------------------------------------
# dumps
#
# Binary layout (all little-endian):
#   magic    8 bytes  b"SHGRID01"
#   kind     uint32   0 = GridFunction, 1 = CoefficientField, 2 = FaceField
#   d        uint32
#   lower    d x float64
#   upper    d x float64
#   spacing  float64
#   shape    d x uint64 (cells per axis)
#   payload  float64, row-major (C order):
#            GridFunction: prod(shape) values
#            CoefficientField: prod(shape) * d * d values (tensor row-major per cell)
#            FaceField: component 0, 1, ... each of shape face_shape(shape, i)
# ---------------------------------------------------------------------------

MAGIC = b"SHGRID01"
_KINDS = {GridFunction: 0, CoefficientField: 1, FaceField: 2}


def _payload(obj) -> np.ndarray:
    if isinstance(obj, GridFunction):
        return obj.values.ravel()
    if isinstance(obj, CoefficientField):
        return obj.cells.ravel()
    return np.concatenate([c.ravel() for c in obj.components])


def to_bytes(obj) -> bytes:
    kind = _KINDS[type(obj)]
    box = obj.box
    d = box.dimension
    shape = grid_shape(box, obj.spacing)
    head = MAGIC + struct.pack("<II", kind, d)
    head += struct.pack(f"<{d}d", *box.lower) + struct.pack(f"<{d}d", *box.upper)
    head += struct.pack("<d", obj.spacing) + struct.pack(f"<{d}Q", *shape)
    return head + np.ascontiguousarray(_payload(obj), dtype="<f8").tobytes()


def from_bytes(data: bytes):
    if data[:8] != MAGIC:
        raise ValueError("not a grid dump")
    kind, d = struct.unpack_from("<II", data, 8)
    off = 16
    lower = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    upper = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    (spacing,) = struct.unpack_from("<d", data, off)
    off += 8
    shape = struct.unpack_from(f"<{d}Q", data, off)
    off += 8 * d
    payload = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
    box = Box(lower, upper)
    if kind == 0:
        return GridFunction(box, spacing, payload.reshape(shape))
    if kind == 1:
        return CoefficientField(box, spacing, payload.reshape(tuple(shape) + (d, d)))
    comps, start = [], 0
    for i in range(d):
        fs = face_shape(shape, i)
        size = int(np.prod(fs))
        comps.append(payload[start:start + size].reshape(fs))
        start += size
    return FaceField(box, spacing, tuple(comps))


def save_binary(obj, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(obj))


def load_binary(path: str | Path):
    return from_bytes(Path(path).read_bytes())


def to_csv(obj) -> str:
    """CSV dump: ``# d, box, spacing`` header comment, then index columns and values."""
    box = obj.box
    d = box.dimension
    buf = io.StringIO()
    buf.write(f"# d={d} lower={list(box.lower)} upper={list(box.upper)} spacing={obj.spacing}\n")
    w = csv.writer(buf, lineterminator="\n")
    idx_cols = [f"k{i}" for i in range(d)]
    if isinstance(obj, GridFunction):
        w.writerow(idx_cols + ["value"])
        for k in np.ndindex(obj.shape):
            w.writerow(list(k) + [repr(float(obj.values[k]))])
    elif isinstance(obj, CoefficientField):
        w.writerow(idx_cols + [f"a{i}{j}" for i in range(d) for j in range(d)])
        for k in np.ndindex(obj.shape):
            w.writerow(list(k) + [repr(float(v)) for v in obj.cells[k].ravel()])
    else:
        w.writerow(["axis"] + idx_cols + ["value"])
        for i, c in enumerate(obj.components):
            for k in np.ndindex(c.shape):
                w.writerow([i] + list(k) + [repr(float(c[k]))])
    return buf.getvalue()
