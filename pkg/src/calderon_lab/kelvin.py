"""Inversion ``y = (2R/|x|)^2 x`` for the spherical-cap geometry.

The sphere ``|x - a| = R`` with ``a = (0, 0, R)`` passes through the origin
and is mapped onto the plane ``y3 = 2R``; the ball interior goes to
``y3 > 2R``.  The flat frame ``z = (y1, y2, 2R - y3)`` puts the image domain
under ``z3 = 0`` so the box machinery applies unchanged.

With ``s = (2R/|y|)^2`` (the conformal factor, ``|dx| = s |dy|``):

* fields: ``u~(y) = s^((n-2)/2) u(x(y))``
* potentials: ``q~(y) = s^2 q(x(y))``
* the energy of ``u`` over the original domain equals
  ``int s^(n-2) |grad U|^2 + s^n q U^2 dy`` with ``U = u o x``.

The last line gives an independent way to compute the original-side
pairing on the flat lattice (conductivity ``s^(n-2)``, potential
``s^n q``), which is what :func:`compare_dtn_norms` checks against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import BoxDomain, GridField
from .errors import GeometryError
from .forward import ForwardSolver
from .kernels import interp_cubic
from .norms import TraceBasis, operator_norm

ORIGIN_TOL = 1e-9
N_DIM = 3


@dataclass(frozen=True)
class KelvinMap:
    """Inversion in the sphere of radius ``2R`` about the origin."""

    ball_radius: float

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.ball_radius])

    @property
    def plane(self) -> float:
        return 2.0 * self.ball_radius

    def _apply(self, pts):
        pts = np.asarray(pts, dtype=float)
        r2 = np.sum(pts ** 2, axis=-1, keepdims=True)
        if np.any(np.sqrt(r2) < ORIGIN_TOL * max(self.ball_radius, 1.0)):
            raise GeometryError("point at the inversion centre")
        return (2.0 * self.ball_radius) ** 2 / r2 * pts

    forward = _apply
    inverse = _apply  # the inversion is an involution

    def factor(self, pts) -> np.ndarray:
        """Conformal factor ``s = (2R/|p|)^2``."""
        pts = np.asarray(pts, dtype=float)
        return (2.0 * self.ball_radius) ** 2 / np.sum(pts ** 2, axis=-1)

    def to_flat(self, y):
        """``y -> z = (y1, y2, 2R - y3)``; also its own inverse."""
        z = np.array(y, dtype=float)
        z[..., 2] = self.plane - z[..., 2]
        return z

    from_flat = to_flat


def map_points(kmap: KelvinMap, points, direction: str = "forward") -> np.ndarray:
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    return kmap.forward(points)


def sphere_points(kmap: KelvinMap, count: int, rng=None) -> np.ndarray:
    """Random points on ``|x - a| = R`` away from the origin."""
    rng = np.random.default_rng(rng)
    v = rng.standard_normal((count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = kmap.center + kmap.ball_radius * v
    far = np.linalg.norm(pts, axis=1) > 1e-3 * kmap.ball_radius
    return pts[far]


def flat_points(kmap: KelvinMap, domain: BoxDomain) -> np.ndarray:
    """``y`` coordinates of every node of a flat-frame lattice, shape (N, 3)."""
    return kmap.from_flat(domain.points())


def original_hull(kmap: KelvinMap, flat: BoxDomain, cells: int, pad: int = 2) -> BoxDomain:
    """Lattice box in original coordinates covering the preimage of ``flat``.

    The spacing is chosen so the longest side has ``cells`` cells; ``pad``
    extra cells keep the cubic stencils inside.
    """
    x = kmap.inverse(flat_points(kmap, flat))
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    h = float((hi - lo).max()) / cells
    n = np.ceil((hi - lo) / h).astype(int) + 2 * pad
    lower = lo - pad * h
    return BoxDomain(tuple(lower), tuple(lower + n * h), tuple(int(c) for c in n))


def _pullback(src: GridField | Callable, pts: np.ndarray) -> np.ndarray:
    if callable(src) and not isinstance(src, GridField):
        return src(pts[:, 0], pts[:, 1], pts[:, 2])
    dom = src.domain
    lo = np.array(dom.lower) - 1e-9 * dom.h
    hi = np.array(dom.upper) + 1e-9 * dom.h
    if np.any(pts < lo) or np.any(pts > hi):
        raise GeometryError("pullback point outside the source lattice hull")
    return interp_cubic(src.values, dom.lower, dom.h, pts)


def transform_field(kmap: KelvinMap, u, target: BoxDomain, direction: str = "forward") -> GridField:
    """Weighted pullback ``s^((n-2)/2) u(x(.))``.

    ``forward``: ``u`` lives in original coordinates and ``target`` is a
    flat-frame lattice.  ``inverse``: ``u`` lives on a flat-frame lattice
    and ``target`` is an original-coordinate lattice.  ``u`` may also be a
    callable ``u(p1, p2, p3)`` in its own coordinates.
    """
    return _transform(kmap, u, target, direction, (N_DIM - 2) / 2.0)


def transform_potential(kmap: KelvinMap, q, target: BoxDomain, direction: str = "forward") -> GridField:
    """Weighted pullback ``s^2 q(x(.))``."""
    return _transform(kmap, q, target, direction, 2.0)


def _transform(kmap, src, target, direction, power):
    if direction == "forward":
        y = flat_points(kmap, target)
        x = kmap.inverse(y)
        vals = _pullback(src, x) * kmap.factor(y) ** power
    elif direction == "inverse":
        x = target.points()
        y = kmap.forward(x)
        z = kmap.to_flat(y)
        vals = _pullback(src, z) * kmap.factor(x) ** power
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return GridField(target, vals.reshape(target.shape))


def original_side_solver(kmap: KelvinMap, flat: BoxDomain, q) -> ForwardSolver:
    """Solver on the flat lattice that reproduces the original-side energy.

    Conductivity ``s^(n-2)`` and potential ``s^n q(x(y))``; its boundary
    pairing with nodal data ``f o x`` equals ``<Lambda_q f, g>`` up to the
    discretization error.
    """
    y = flat_points(kmap, flat)
    s = kmap.factor(y)
    qx = _pullback(q, kmap.inverse(y)) if q is not None else np.zeros(len(y))
    gamma = (s ** (N_DIM - 2)).reshape(flat.shape)
    pot = (s ** N_DIM * qx).reshape(flat.shape)
    return ForwardSolver(flat, q=GridField(flat, pot), gamma=GridField(flat, gamma))


def plane_side_solver(kmap: KelvinMap, flat: BoxDomain, q) -> ForwardSolver:
    return ForwardSolver(flat, q=transform_potential(kmap, q, flat) if q is not None else None)


@dataclass
class NormComparison:
    sphere_norm: float
    plane_norm: float
    ratio: float
    pairing_rel_error: float
    sphere_matrix: np.ndarray = field(repr=False)
    plane_matrix: np.ndarray = field(repr=False)


def boundary_weight(kmap: KelvinMap, flat: BoxDomain) -> np.ndarray:
    """``s^((n-2)/2)`` at the boundary nodes of the flat lattice."""
    y = flat_points(kmap, flat)[flat.partition.boundary_nodes]
    return kmap.factor(y) ** ((N_DIM - 2) / 2.0)


def compare_dtn_norms(kmap: KelvinMap, flat: BoxDomain, q1, q2, basis: TraceBasis) -> NormComparison:
    """Original-side versus transformed-side DtN differences.

    The original-side matrix pairs data ``phi_j o y`` with ``phi_i o y``;
    the transformed side pairs ``w phi_j`` with ``w phi_i`` where
    ``w = s^((n-2)/2)``.  The two matrices agree up to discretization error
    (the pairing identity for differences); the report also gives both
    operator norms, each in the trace basis of its own data.
    """
    d_sph = original_side_solver(kmap, flat, q1).dtn(basis) - \
        original_side_solver(kmap, flat, q2).dtn(basis)
    p1 = plane_side_solver(kmap, flat, q1)
    p2 = plane_side_solver(kmap, flat, q2)
    d_pl = p1.dtn(basis) - p2.dtn(basis)
    w = boundary_weight(kmap, flat)
    wphi = w[:, None] * basis.matrix
    flux = p1.apply_dtn(wphi) - p2.apply_dtn(wphi)
    paired = wphi.T @ flux
    sph = d_sph.matrix
    nrm = np.linalg.norm(sph)
    rel = float(np.linalg.norm(paired - sph) / nrm) if nrm > 0 else float(np.linalg.norm(paired))
    a = operator_norm(d_sph)
    b = operator_norm(d_pl)
    ratio = b / a if a > 0 else (0.0 if b == 0 else np.inf)
    return NormComparison(a, b, ratio, rel, sph, paired)


def kelvin_pipeline(kmap: KelvinMap, flat: BoxDomain, q1, q2, run: Callable):
    """Transform both potentials to the flat frame and hand them to ``run``.

    ``run(q1_tilde, q2_tilde)`` is any flat-box (case (a)) pipeline; this
    function adds nothing else, so its output equals calling ``run`` on the
    transformed potentials directly.
    """
    return run(transform_potential(kmap, q1, flat), transform_potential(kmap, q2, flat))
