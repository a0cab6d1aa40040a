"""Reduction between the conductivity and Schrodinger problems.

With ``u = gamma^(-1/2) v``, ``div(gamma grad u) = 0`` becomes
``(-Delta + q) v = 0`` for ``q = Delta sqrt(gamma) / sqrt(gamma)``, and the
two DtN maps are related by a diagonal conjugation plus a multiplication
term built from the normal derivative of ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import FACES, GAMMA0_FACE, BoxDomain, GridField
from .errors import BoundaryAgreementError, LatticeError, NonpositiveConductivity
from .forward import ForwardSolver, PartialDtN, fingerprint
from .norms import TraceBasis, operator_norm

AGREEMENT_TOL = 1e-10


def _second_difference(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central second difference, one-sided ``(2f0 - 5f1 + 4f2 - f3)/h^2`` at the ends."""
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = f[2:] - 2.0 * f[1:-1] + f[:-2]
    out[0] = 2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]
    out[-1] = 2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]
    return np.moveaxis(out, 0, axis) / h ** 2


def _check_positive(gamma: GridField) -> np.ndarray:
    g = np.asarray(gamma.values)
    if np.iscomplexobj(g) or np.min(g) <= 0.0:
        raise NonpositiveConductivity("conductivity must be real and strictly positive")
    return g


def gamma_to_q(gamma: GridField) -> GridField:
    """``q = Delta sqrt(gamma) / sqrt(gamma)`` on every lattice node."""
    g = _check_positive(gamma)
    if min(gamma.domain.shape) < 4:
        raise LatticeError("need at least 4 nodes per axis for the boundary stencil")
    r = np.sqrt(g)
    h = gamma.domain.h
    lap = sum(_second_difference(r, ax, h) for ax in range(3))
    return GridField(gamma.domain, lap / r)


def normal_derivative(fld: GridField) -> np.ndarray:
    """Outward normal derivative at the boundary nodes (second-order one-sided).

    Edge and corner nodes use the normal of the face that owns them in the
    boundary partition.
    """
    dom = fld.domain
    v = np.asarray(fld.values)
    h = dom.h
    part = dom.partition
    owner = part.face_map.ravel()[part.boundary_nodes]
    out = np.empty(part.n_boundary, dtype=v.dtype)
    idx = np.unravel_index(part.boundary_nodes, dom.shape)
    for fid in range(6):
        sel = owner == fid
        if not sel.any():
            continue
        axis, side = FACES[fid]
        va = np.moveaxis(v, axis, 0)
        if side:
            d = (3.0 * va[-1] - 4.0 * va[-2] + va[-3]) / (2.0 * h)
        else:
            d = (3.0 * va[0] - 4.0 * va[1] + va[2]) / (2.0 * h)
        others = [idx[a][sel] for a in range(3) if a != axis]
        out[sel] = d[tuple(others)]
    return out


@dataclass(frozen=True)
class BoundaryAgreement:
    value_residual: float
    normal_residual: float

    @property
    def ok(self) -> bool:
        return max(self.value_residual, self.normal_residual) <= AGREEMENT_TOL


def boundary_agreement(gamma1: GridField, gamma2: GridField) -> BoundaryAgreement:
    """Max differences of ``gamma`` and its normal derivative over gamma nodes."""
    if gamma1.domain != gamma2.domain:
        raise LatticeError("conductivities live on different lattices")
    part = gamma1.domain.partition
    mask = part.gamma_mask()
    b = part.boundary_nodes[mask]
    dv = np.abs(gamma1.values.ravel()[b] - gamma2.values.ravel()[b])
    dn = np.abs(normal_derivative(gamma1) - normal_derivative(gamma2))[mask]
    return BoundaryAgreement(float(dv.max(initial=0.0)), float(dn.max(initial=0.0)))


@dataclass
class ConductivityPair:
    """Two conductivities that agree to first order on the accessible faces."""

    gamma1: GridField
    gamma2: GridField
    agreement: BoundaryAgreement = field(init=False)
    q1: GridField = field(init=False, repr=False)
    q2: GridField = field(init=False, repr=False)

    def __post_init__(self):
        _check_positive(self.gamma1)
        _check_positive(self.gamma2)
        self.agreement = boundary_agreement(self.gamma1, self.gamma2)
        if not self.agreement.ok:
            raise BoundaryAgreementError(
                f"conductivities differ on gamma (values {self.agreement.value_residual:.2e}, "
                f"normal derivatives {self.agreement.normal_residual:.2e})")
        self.q1 = gamma_to_q(self.gamma1)
        self.q2 = gamma_to_q(self.gamma2)


class _ReducedMap:
    """Nodal Schrodinger-side DtN built from a conductivity solver."""

    def __init__(self, solver: ForwardSolver, gamma: GridField):
        part = gamma.domain.partition
        gb = np.asarray(gamma.values).ravel()[part.boundary_nodes]
        self.solver = solver
        self.scale = gb ** -0.5
        self.shift = 0.5 * normal_derivative(gamma) / gb * part.area

    def apply_dtn(self, traces) -> np.ndarray:
        f = np.asarray(traces)
        s = self.scale if f.ndim == 1 else self.scale[:, None]
        t = self.shift if f.ndim == 1 else self.shift[:, None]
        return s * self.solver.apply_dtn(s * f) + t * f


def relate_dtn(L_gamma: PartialDtN, gamma: GridField) -> PartialDtN:
    """Schrodinger-side DtN ``gamma^-1/2 L_gamma gamma^-1/2 + (1/2) gamma^-1 d_nu gamma``.

    ``L_gamma`` must come from a single conductivity solver (as built by
    ``assemble_dtn_gamma``) so the conjugation can act at the nodes.
    """
    if len(L_gamma.sources) != 1 or L_gamma.sources[0][0] != 1.0:
        raise LatticeError("relate_dtn needs the DtN of a single conductivity solve")
    solver = L_gamma.sources[0][1]
    if solver.domain != gamma.domain:
        raise LatticeError("conductivity lattice does not match the DtN lattice")
    _check_positive(gamma)
    reduced = _ReducedMap(solver, gamma)
    basis = L_gamma.basis
    mat = basis.matrix.T @ reduced.apply_dtn(basis.matrix)
    fp = fingerprint(gamma, np.frombuffer(L_gamma.fingerprint.encode(), dtype=np.uint8))
    return PartialDtN(mat, basis, L_gamma.h, fp, ((1.0, reduced),))


def gamma_dtn(gamma: GridField, basis: TraceBasis) -> PartialDtN:
    return ForwardSolver(gamma.domain, gamma=gamma, check=False).dtn(basis)


@dataclass
class TransferReport:
    t: np.ndarray
    norm_gamma: np.ndarray
    norm_q: np.ndarray
    ratio: np.ndarray
    C: float
    gamma_diff: np.ndarray
    q_diff: np.ndarray
    qg_C: float
    qg_sigma: float

    def rows(self):
        return [dict(t=float(a), norm_gamma=float(b), norm_q=float(c), ratio=float(d),
                     gamma_inf=float(e), q_inf=float(f))
                for a, b, c, d, e, f in zip(self.t, self.norm_gamma, self.norm_q,
                                            self.ratio, self.gamma_diff, self.q_diff)]


def norm_transfer_check(pair: ConductivityPair, basis: TraceBasis) -> tuple:
    """Operator norms of the conductivity and Schrodinger DtN differences.

    Returns ``(norm_gamma, norm_q, ratio)``; the Schrodinger side goes
    through :func:`relate_dtn`.
    """
    l1 = gamma_dtn(pair.gamma1, basis)
    l2 = gamma_dtn(pair.gamma2, basis)
    ng = operator_norm(l1 - l2)
    nq = operator_norm(relate_dtn(l1, pair.gamma1) - relate_dtn(l2, pair.gamma2))
    ratio = nq / ng if ng > 0 else (0.0 if nq == 0 else np.inf)
    return ng, nq, ratio


def perturbation_family(gamma1: GridField, bump: GridField, amplitudes, basis: TraceBasis) -> TransferReport:
    """Norm transfer over ``gamma2 = gamma1 + t * bump``.

    ``C`` is the largest observed ratio; ``(qg_C, qg_sigma)`` is the
    log-log fit of ``|gamma1 - gamma2|_inf`` against ``|q1 - q2|_inf``.
    """
    ts = np.asarray(amplitudes, dtype=float)
    l1 = gamma_dtn(gamma1, basis)
    r1 = relate_dtn(l1, gamma1)
    q1 = gamma_to_q(gamma1)
    ng, nq, gd, qd = [], [], [], []
    for t in ts:
        pair = ConductivityPair(gamma1, gamma1.with_values(gamma1.values + t * bump.values))
        l2 = gamma_dtn(pair.gamma2, basis)
        ng.append(operator_norm(l1 - l2))
        nq.append(operator_norm(r1 - relate_dtn(l2, pair.gamma2)))
        gd.append(float(np.abs(pair.gamma2.values - gamma1.values).max()))
        qd.append(float(np.abs(pair.q2.values - q1.values).max()))
    ng, nq, gd, qd = map(np.asarray, (ng, nq, gd, qd))
    ratio = np.where(ng > 0, nq / np.where(ng > 0, ng, 1.0), 0.0)
    keep = (gd > 0) & (qd > 0)
    if keep.sum() >= 2:
        sig, icpt = np.polyfit(np.log(qd[keep]), np.log(gd[keep]), 1)
        qg_c = float(np.exp(icpt))
        qg_c = max(qg_c, float((gd[keep] / qd[keep] ** sig).max()))
    else:
        sig, qg_c = float("nan"), float("nan")
    return TransferReport(ts, ng, nq, ratio, float(ratio.max(initial=0.0)), gd, qd, qg_c, float(sig))
