"""Uniform box lattices, boundary partition and parity operators.

Case (a) geometry: the box lies in ``{x3 <= 0}`` with its top face on the
plane ``x3 = 0``.  That flat face is the inaccessible part ``gamma0``; the
other five faces form the accessible part ``gamma``.  Fields are stored
node-centred and integrated with the trapezoid rule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import LatticeError

# face identifiers: (axis, side) with side 0 = lower, 1 = upper
FACES = ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1))
GAMMA0_FACE = 5
PARITY_TAGS = ("none", "even_in_x3", "zero_extended")

_SPACING_RTOL = 1e-10


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box with a uniform lattice of equal spacing on all axes."""

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        cells = tuple(int(c) for c in self.cells)
        if len(lower) != 3 or len(upper) != 3 or len(cells) != 3:
            raise LatticeError("box corners and cell counts must be 3-vectors")
        if any(u <= l for l, u in zip(lower, upper)):
            raise LatticeError(f"upper corner {upper} must exceed lower {lower}")
        if any(c < 1 for c in cells):
            raise LatticeError("cell counts must be positive")
        steps = [(u - l) / c for l, u, c in zip(lower, upper, cells)]
        if max(steps) - min(steps) > _SPACING_RTOL * max(steps):
            raise LatticeError(f"unequal grid spacing {steps}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / self.cells[0]

    @property
    def shape(self) -> tuple:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lengths(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def axes(self) -> tuple:
        h = self.h
        return tuple(l + h * np.arange(n) for l, n in zip(self.lower, self.shape))

    def mesh(self):
        """Coordinate arrays ``(X1, X2, X3)`` of every lattice node."""
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (half weight on each boundary layer)."""
        w1 = [np.full(n, self.h) for n in self.shape]
        for w in w1:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w1[0][:, None, None] * w1[1][None, :, None] * w1[2][None, None, :]

    @property
    def is_flush(self) -> bool:
        """True when the top face lies on ``x3 = 0``."""
        return abs(self.upper[2]) <= _SPACING_RTOL * self.h

    @property
    def is_symmetric(self) -> bool:
        """True when the box is symmetric about the plane ``x3 = 0``."""
        return abs(self.upper[2] + self.lower[2]) <= _SPACING_RTOL * self.h

    @cached_property
    def partition(self) -> "BoundaryPartition":
        return BoundaryPartition.build(self)

    def offset_of(self, other: "BoxDomain") -> tuple:
        """Integer node offset of ``other``'s origin inside this lattice.

        Raises ``LatticeError`` unless ``other``'s nodes are nodes of this
        lattice and ``other`` fits inside.
        """
        h = self.h
        if abs(other.h - h) > _SPACING_RTOL * h:
            raise LatticeError("lattice spacings differ")
        off = []
        for d in range(3):
            s = (other.lower[d] - self.lower[d]) / h
            k = int(round(s))
            if abs(s - k) > 1e-8 or k < 0 or k + other.cells[d] > self.cells[d]:
                raise LatticeError("source lattice is not contained in target lattice")
            off.append(k)
        return tuple(off)


def build_box(lower: Sequence[float], upper: Sequence[float], resolution) -> BoxDomain:
    """Build a case (a) box whose top face is the plane ``x3 = 0``.

    ``resolution`` is the number of cells per axis (an int applied to all
    axes, or a 3-sequence).  Spacing must come out equal on every axis.
    """
    if np.isscalar(resolution):
        cells = (int(resolution),) * 3
    else:
        cells = tuple(int(r) for r in resolution)
    if min(cells) < 8:
        raise LatticeError(f"resolution {cells} below the minimum of 8 cells per axis")
    if abs(float(upper[2])) > 0.0:
        raise LatticeError("the box must lie in {x3 <= 0} with its top face on x3 = 0")
    return BoxDomain(tuple(lower), tuple(upper), cells)


@dataclass(frozen=True)
class BoundaryPartition:
    """Split of the boundary nodes into gamma0 (flat face) and gamma.

    ``face_map`` has the lattice shape: -1 at interior nodes, otherwise the
    owning face id.  Edge and corner nodes on ``x3 = 0`` belong to gamma0;
    remaining edge nodes go to the lowest face id that contains them.
    """

    face_map: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)
    gamma0_nodes: np.ndarray = field(repr=False)
    gamma_nodes: np.ndarray = field(repr=False)
    area: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, dom: BoxDomain) -> "BoundaryPartition":
        shape = dom.shape
        face_map = np.full(shape, -1, dtype=np.int64)
        # lowest id wins: assign in reverse so earlier faces overwrite
        for fid in range(5, -1, -1):
            axis, side = FACES[fid]
            idx = [slice(None)] * 3
            idx[axis] = -1 if side else 0
            face_map[tuple(idx)] = fid
        face_map[:, :, -1] = GAMMA0_FACE
        flat = face_map.ravel()
        boundary = np.flatnonzero(flat >= 0)
        gamma0 = np.flatnonzero(flat == GAMMA0_FACE)
        gamma = np.flatnonzero((flat >= 0) & (flat != GAMMA0_FACE))
        # boundary area weight: sum over the faces containing the node of
        # its 2-D trapezoid weight on that face
        area = np.zeros(shape)
        h = dom.h
        for axis, side in FACES:
            others = [d for d in range(3) if d != axis]
            w = [np.full(shape[d], h) for d in others]
            for v in w:
                v[0] *= 0.5
                v[-1] *= 0.5
            wf = np.multiply.outer(w[0], w[1])
            idx = [slice(None)] * 3
            idx[axis] = -1 if side else 0
            area[tuple(idx)] += wf
        return cls(face_map, boundary, gamma0, gamma, area.ravel()[boundary])

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_nodes)

    def gamma_mask(self) -> np.ndarray:
        """Boolean mask over ``boundary_nodes`` selecting gamma nodes."""
        return self.face_map.ravel()[self.boundary_nodes] != GAMMA0_FACE


@dataclass(frozen=True)
class GridField:
    """Samples of a function on the nodes of a ``BoxDomain``."""

    domain: BoxDomain
    values: np.ndarray = field(repr=False)
    parity: str = "none"

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.size != self.domain.size:
            raise LatticeError(
                f"array with {vals.size} entries does not match lattice {self.domain.shape}")
        if not np.iscomplexobj(vals):
            vals = vals.astype(np.float64, copy=False)
        object.__setattr__(self, "values", vals.reshape(self.domain.shape))
        if self.parity not in PARITY_TAGS:
            raise LatticeError(f"unknown parity tag {self.parity!r}")

    @classmethod
    def from_function(cls, domain: BoxDomain, fn: Callable, parity: str = "none") -> "GridField":
        x1, x2, x3 = domain.mesh()
        vals = np.broadcast_to(fn(x1, x2, x3), domain.shape).copy()
        return cls(domain, vals, parity)

    @classmethod
    def zeros(cls, domain: BoxDomain, dtype=float) -> "GridField":
        return cls(domain, np.zeros(domain.shape, dtype=dtype))

    def with_values(self, values, parity=None) -> "GridField":
        return GridField(self.domain, values, self.parity if parity is None else parity)

    def integrate(self) -> complex:
        return (self.domain.weights * self.values).sum()

    def norm_l1(self) -> float:
        return float((self.domain.weights * np.abs(self.values)).sum())

    def norm_l2(self) -> float:
        return float(np.sqrt((self.domain.weights * np.abs(self.values) ** 2).sum()))

    def norm_inf(self) -> float:
        return float(np.abs(self.values).max())

    def is_even_in_x3(self, atol: float = 0.0) -> bool:
        if not self.domain.is_symmetric:
            return False
        return bool(np.all(np.abs(self.values - self.values[:, :, ::-1]) <= atol))

    def restrict(self, sub: BoxDomain) -> "GridField":
        """Samples on a sub-lattice of this field's lattice."""
        i, j, k = self.domain.offset_of(sub)
        n1, n2, n3 = sub.shape
        vals = self.values[i:i + n1, j:j + n2, k:k + n3]
        return GridField(sub, vals.copy())

    def interpolate(self, points) -> np.ndarray:
        """Tricubic interpolation at points inside the lattice hull."""
        from .kernels import interp_cubic
        return interp_cubic(self.values, self.domain.lower, self.domain.h, points)


def zero_extend(q: GridField, target: BoxDomain) -> GridField:
    """Copy ``q`` into a larger lattice, zero outside its own box."""
    i, j, k = target.offset_of(q.domain)
    n1, n2, n3 = q.domain.shape
    vals = np.zeros(target.shape, dtype=q.values.dtype)
    vals[i:i + n1, j:j + n2, k:k + n3] = q.values
    return GridField(target, vals, "zero_extended")


def doubled_domain(dom: BoxDomain) -> BoxDomain:
    """Mirror image of a flush box glued along ``x3 = 0``."""
    if not dom.is_flush:
        raise LatticeError("box is not flush with the plane x3 = 0")
    cells = (dom.cells[0], dom.cells[1], 2 * dom.cells[2])
    return BoxDomain(dom.lower, (dom.upper[0], dom.upper[1], -dom.lower[2]), cells)


def lower_half(dom: BoxDomain) -> BoxDomain:
    """Inverse of :func:`doubled_domain`."""
    if not dom.is_symmetric or dom.cells[2] % 2:
        raise LatticeError("box is not symmetric about x3 = 0")
    cells = (dom.cells[0], dom.cells[1], dom.cells[2] // 2)
    return BoxDomain(dom.lower, (dom.upper[0], dom.upper[1], 0.0), cells)


def even_reflect(q: GridField) -> GridField:
    """Even extension across ``x3 = 0``; the shared plane is copied once."""
    target = doubled_domain(q.domain)
    v = q.values
    vals = np.concatenate([v, v[:, :, -2::-1]], axis=2)
    return GridField(target, vals, "even_in_x3")


def reflect_field(hf: GridField) -> GridField:
    """``h*(x', x3) = h(x', -x3)`` on a box symmetric about ``x3 = 0``."""
    if not hf.domain.is_symmetric:
        raise LatticeError("reflection needs a box symmetric about x3 = 0")
    return GridField(hf.domain, hf.values[:, :, ::-1].copy(), hf.parity)


# --- serialization --------------------------------------------------------

_CGF_MAGIC = b"CGF1"
_CGF_HEADER = struct.Struct("<4s3QBB")


def write_gridfield(path, fld: GridField) -> None:
    """Write ``CGF1``: magic, 3 u64 node counts, parity byte, complex flag, data."""
    cplx = np.iscomplexobj(fld.values)
    header = _CGF_HEADER.pack(_CGF_MAGIC, *fld.domain.shape,
                              PARITY_TAGS.index(fld.parity), int(cplx))
    data = fld.values.astype("<c16" if cplx else "<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())


def read_gridfield(path, domain: BoxDomain | None = None) -> GridField:
    """Read a ``CGF1`` file.

    The header carries only node counts, so the geometry comes from
    ``domain``; without it a unit-spacing lattice at the origin is used.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, n1, n2, n3, parity, cplx = _CGF_HEADER.unpack_from(raw)
    if magic != _CGF_MAGIC:
        raise LatticeError(f"{path}: not a CGF1 file")
    shape = (n1, n2, n3)
    dtype = "<c16" if cplx else "<f8"
    vals = np.frombuffer(raw, dtype=dtype, offset=_CGF_HEADER.size).reshape(shape)
    if domain is None:
        domain = BoxDomain((0.0, 0.0, 0.0), tuple(float(n - 1) for n in shape),
                           tuple(n - 1 for n in shape))
    elif domain.shape != shape:
        raise LatticeError(f"{path}: lattice {shape} does not match domain {domain.shape}")
    return GridField(domain, vals.astype(np.complex128 if cplx else np.float64),
                     PARITY_TAGS[parity])


# --- sampling helpers -----------------------------------------------------

def smooth_bump(center, radius, amplitude=1.0):
    """C-infinity bump ``A exp(1 - 1/(1 - r^2))`` supported in a ball."""
    c = np.asarray(center, dtype=float)

    def fn(x1, x2, x3):
        r2 = ((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2) / radius ** 2
        out = np.zeros(np.broadcast(x1, x2, x3).shape)
        inside = r2 < 1.0
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    return fn


def box_indicator(domain: BoxDomain, lower, upper) -> GridField:
    """Indicator of a lattice-aligned box, trapezoid-consistent.

    Nodes on a face of the box get 1/2 per face they sit on, so lattice
    quadrature reproduces volumes and translation moduli exactly.
    """
    profiles = []
    for d, ax in enumerate(domain.axes):
        tol = 1e-9 * domain.h
        p = np.where((ax > lower[d] + tol) & (ax < upper[d] - tol), 1.0, 0.0)
        p[np.abs(ax - lower[d]) <= tol] = 0.5
        p[np.abs(ax - upper[d]) <= tol] = 0.5
        profiles.append(p)
    vals = profiles[0][:, None, None] * profiles[1][None, :, None] * profiles[2][None, None, :]
    return GridField(domain, vals)


@dataclass(frozen=True)
class BoundaryTrace:
    """Values at the boundary nodes of a lattice, ordered as
    ``domain.partition.boundary_nodes``."""

    domain: BoxDomain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.domain.partition.n_boundary,):
            raise LatticeError("trace length does not match the boundary node count")
        if not np.iscomplexobj(vals):
            vals = vals.astype(np.float64, copy=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_field(cls, fld: GridField) -> "BoundaryTrace":
        return cls(fld.domain, fld.values.ravel()[fld.domain.partition.boundary_nodes])

    @classmethod
    def from_function(cls, domain: BoxDomain, fn: Callable) -> "BoundaryTrace":
        return cls.from_field(GridField.from_function(domain, fn))

    def gamma0_leak(self) -> float:
        """Largest magnitude of the trace on gamma0."""
        mask = ~self.domain.partition.gamma_mask()
        return float(np.abs(self.values[mask]).max(initial=0.0))

    def restricted_to_gamma(self) -> "BoundaryTrace":
        vals = self.values.copy()
        vals[~self.domain.partition.gamma_mask()] = 0.0
        return BoundaryTrace(self.domain, vals)

    def norm_l2(self) -> float:
        """Discrete L2(boundary) norm with trapezoid surface weights."""
        return float(np.sqrt((self.domain.partition.area * np.abs(self.values) ** 2).sum()))
