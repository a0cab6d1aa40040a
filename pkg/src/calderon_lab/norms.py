"""Discrete trace norms, the DtN operator norm, volume norms and the L1
translation modulus.

The trace space on the accessible faces is discretized face by face with
tensor sine modes that vanish on the face edges.  A mode with face
Laplacian eigenvalue ``lam`` carries weight ``(1 + lam) ** s`` in the
squared norm of order ``s``; the dual order ``-1/2`` is the weighted l2
dual of order ``+1/2`` in the same basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import FACES, BoundaryTrace, BoxDomain, GridField
from .errors import LatticeError, SupportError
from .kernels import translation_l1


class TraceBasis:
    """Per-face sine modes on the five accessible faces.

    Parameters
    ----------
    domain : BoxDomain
    modes : int or None
        Modes kept per tangential axis on every face.  ``None`` keeps the
        full discrete basis (``cells - 1`` modes per axis), which spans every
        trace that vanishes on the face edges.
    """

    def __init__(self, domain: BoxDomain, modes: int | None = 4):
        self.domain = domain
        self.modes = modes
        part = domain.partition
        pos = np.full(domain.size, -1, dtype=np.int64)
        pos[part.boundary_nodes] = np.arange(part.n_boundary)
        pos = pos.reshape(domain.shape)

        h = domain.h
        cols, lam, face, k1s, k2s = [], [], [], [], []
        for fid in range(5):
            axis, side = FACES[fid]
            a, b = [d for d in range(3) if d != axis]
            ma, mb = domain.cells[a], domain.cells[b]
            la, lb = ma * h, mb * h
            ka = ma - 1 if modes is None else min(modes, ma - 1)
            kb = mb - 1 if modes is None else min(modes, mb - 1)
            idx = [slice(None)] * 3
            idx[axis] = -1 if side else 0
            rows = pos[tuple(idx)]  # (na, nb) boundary positions of the face
            ia = np.arange(ma + 1)
            ib = np.arange(mb + 1)
            for k1 in range(1, ka + 1):
                sa = np.sin(np.pi * k1 * ia / ma)
                for k2 in range(1, kb + 1):
                    sb = np.sin(np.pi * k2 * ib / mb)
                    vals = (2.0 / np.sqrt(la * lb)) * np.multiply.outer(sa, sb)
                    col = np.zeros(part.n_boundary)
                    # the face edges carry zeros, so shared nodes need no care
                    col[rows[1:-1, 1:-1].ravel()] = vals[1:-1, 1:-1].ravel()
                    cols.append(col)
                    lam.append((np.pi * k1 / la) ** 2 + (np.pi * k2 / lb) ** 2)
                    face.append(fid)
                    k1s.append(k1)
                    k2s.append(k2)
        self.matrix = np.stack(cols, axis=1)
        self.eigenvalues = np.asarray(lam)
        self.face = np.asarray(face)
        self.wavenumbers = np.stack([k1s, k2s], axis=1)

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    def weights(self, order: float) -> np.ndarray:
        """Squared-norm weights ``(1 + lam) ** order``."""
        return (1.0 + self.eigenvalues) ** order

    def coefficients(self, trace) -> np.ndarray:
        """Discrete L2(gamma) projection coefficients of a trace."""
        vals = trace.values if isinstance(trace, BoundaryTrace) else np.asarray(trace)
        return self.matrix.T @ (self.domain.partition.area * vals)

    def synthesize(self, coeffs) -> BoundaryTrace:
        return BoundaryTrace(self.domain, self.matrix @ np.asarray(coeffs))

    def mode(self, index: int) -> BoundaryTrace:
        return BoundaryTrace(self.domain, self.matrix[:, index].copy())

    def gram(self) -> np.ndarray:
        area = self.domain.partition.area
        return self.matrix.T @ (area[:, None] * self.matrix)

    def projection_loss(self, trace) -> float:
        """Fraction of the L2(gamma) energy of ``trace`` outside the span."""
        vals = trace.values if isinstance(trace, BoundaryTrace) else np.asarray(trace)
        total = float((self.domain.partition.area * np.abs(vals) ** 2).sum())
        if total == 0.0:
            return 0.0
        kept = float((np.abs(self.coefficients(vals)) ** 2).sum())
        return max(0.0, 1.0 - kept / total)


def _check_support(trace: BoundaryTrace) -> None:
    vals = trace.values
    leak = trace.gamma0_leak()
    if leak > 1e-12 * max(float(np.abs(vals).max(initial=0.0)), 1e-300):
        raise SupportError(f"trace is nonzero on gamma0 (max {leak:.3e})")


def trace_norm(f: BoundaryTrace, order: float = 0.5, basis: TraceBasis | None = None) -> float:
    """Sobolev-type trace norm ``(sum (1 + lam)^order |c|^2)^(1/2)``.

    Without a basis the full per-face sine basis of ``f``'s lattice is used.
    """
    _check_support(f)
    basis = basis or TraceBasis(f.domain, None)
    c = basis.coefficients(f)
    return float(np.sqrt((basis.weights(order) * np.abs(c) ** 2).sum()))


def operator_norm(D, basis: TraceBasis | None = None) -> float:
    """Norm of a DtN difference from order 1/2 to its dual.

    ``D`` is a PartialDtN (its own basis is used) or a square array; with an
    array and no basis the weights are the identity.
    """
    mat = getattr(D, "matrix", D)
    basis = getattr(D, "basis", None) or basis
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise LatticeError(f"operator matrix must be square, got {mat.shape}")
    if mat.size == 0 or not np.any(mat):
        return 0.0
    if basis is not None:
        s = basis.weights(-0.25)
        mat = s[:, None] * mat * s[None, :]
    return float(np.linalg.norm(mat, 2))


def lattice_frequencies(domain: BoxDomain):
    """Angular frequency axes of the lattice viewed as one period."""
    h = domain.h
    return tuple(2.0 * np.pi * np.fft.fftfreq(n, d=h) for n in domain.shape)


def h_minus1_norm(q0: GridField) -> float:
    """Discrete H^-1 norm by Plancherel on the periodized lattice.

    ``(1/V) sum_xi |F_h q0(xi)|^2 / (1 + |xi|^2)`` with ``F_h`` the lattice
    sum ``h^3 sum q0 e^{i xi.x}`` and ``V`` the period volume.
    """
    dom = q0.domain
    h = dom.h
    vol = float(np.prod(dom.shape)) * h ** 3
    power = np.abs(np.fft.fftn(q0.values)) ** 2 * h ** 6
    k1, k2, k3 = np.meshgrid(*lattice_frequencies(dom), indexing="ij")
    total = (power / (1.0 + k1 ** 2 + k2 ** 2 + k3 ** 2)).sum() / vol
    return float(np.sqrt(total))


def fourier_transform(fld: GridField, xi) -> np.ndarray:
    """Trapezoid quadrature of ``int f(x) exp(i xi.x) dx`` at each row of ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    vals = fld.domain.weights * fld.values
    out = np.empty(len(xi), dtype=complex)
    ax = fld.domain.axes
    for m, (a, b, c) in enumerate(xi):
        e1 = np.exp(1j * a * ax[0])
        e2 = np.exp(1j * b * ax[1])
        e3 = np.exp(1j * c * ax[2])
        out[m] = np.einsum("ijk,i,j,k->", vals, e1, e2, e3)
    return out


@dataclass(frozen=True)
class HolderModulus:
    """Sampled L1 translation modulus ``g(y)`` with a power-law fit."""

    offsets: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    C0: float
    alpha: float
    delta: float

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)

    def envelope_constant(self, alpha: float | None = None) -> float:
        """Smallest C with ``g(y) <= C |y|^alpha`` at every sampled offset."""
        a = self.alpha if alpha is None else alpha
        r = self.radii
        keep = r > 0
        if not keep.any():
            return 0.0
        return float((self.values[keep] / r[keep] ** a).max())

    def rows(self):
        """CSV rows ``(|y|, g, C0, alpha)``."""
        return [(float(r), float(g), self.C0, self.alpha)
                for r, g in zip(self.radii, self.values)]


def translation_modulus(f: GridField, offsets) -> HolderModulus:
    """L1 translation modulus of the zero extension of ``f``.

    Offsets are snapped to lattice vectors; the fit is least squares of
    ``log g`` against ``log |y|`` over offsets with ``g > 0``.
    """
    dom = f.domain
    h = dom.h
    offs = np.atleast_2d(np.asarray(offsets, dtype=float))
    steps = np.rint(offs / h).astype(np.int64)
    limit = np.array(dom.shape) // 2
    if np.any(np.abs(steps) > limit):
        raise LatticeError("offset exceeds half the lattice extent")
    snapped = steps * h
    g = np.array([h ** 3 * translation_l1(f.values, s) for s in steps])
    r = np.linalg.norm(snapped, axis=1)
    keep = (r > 0) & (g > 0)
    if len(np.unique(np.round(r[keep], 12))) >= 2:
        slope, icpt = np.polyfit(np.log(r[keep]), np.log(g[keep]), 1)
        alpha, c0 = float(slope), float(np.exp(icpt))
    else:
        alpha, c0 = float("nan"), float("nan")
    delta = float(r.max()) if len(r) else 0.0
    return HolderModulus(snapped, g, c0, alpha, delta)
