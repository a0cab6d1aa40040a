"""Complex frequency vectors, periodized remainder solves and reflected
exponentially growing solutions.

For ``rho`` with ``rho . rho = 0`` (bilinear), ``u = exp(i rho.x) (1 + w)``
solves ``(Laplacian - q) u = 0`` iff

    Laplacian w + 2i rho . grad w = q (1 + w).

The remainder is computed on a periodic torus laid out in rotated
coordinates where ``Im rho`` points along the second axis.  Frequencies on
that axis are shifted by half a step, which keeps the symbol
``|k|^2 + 2 rho.k`` at least ``2 pi |Im rho| / T2`` away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fftn, ifftn, next_fast_len

from .domain import BoxDomain, GridField, lower_half, reflect_field
from .errors import LatticeError, NonconvergentIteration, SymbolBreakdown
from .kernels import interp_cubic, laplacian7

ITER_TOL = 1e-10
ITER_MAX = 200
SYMBOL_FLOOR = 1e-8
CONTRACTION_CAP = 0.5


def star(v):
    """Reflection ``(v1, v2, v3) -> (v1, v2, -v3)`` of a 3-vector."""
    v = np.array(v, dtype=complex)
    v[..., 2] = -v[..., 2]
    return v


@dataclass(frozen=True)
class RhoPair:
    """Complex vectors ``rho1 + rho2 = xi`` with ``rho_j . rho_j = 0``.

    ``rotation`` maps standard coordinates to the rotated ones (it fixes the
    x3 axis); in rotated coordinates ``Im rho1`` points along ``+e2``.
    """

    xi: np.ndarray
    tau: float
    rho1: np.ndarray
    rho2: np.ndarray
    rotation: np.ndarray = field(repr=False)

    @property
    def rho1_star(self):
        return star(self.rho1)

    @property
    def rho2_star(self):
        return star(self.rho2)

    @property
    def sideband_frequencies(self):
        """Real vectors ``rho1 + rho2*`` and ``rho1* + rho2``."""
        up = self.rho1 + self.rho2_star
        down = self.rho1_star + self.rho2
        return up.real, down.real

    @property
    def xi_star(self):
        return star(self.xi).real


def _rotation(xi) -> np.ndarray:
    r = np.hypot(xi[0], xi[1])
    if r == 0.0:
        return np.eye(3)
    c, s = xi[0] / r, xi[1] / r
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def make_rho(xi, tau: float) -> RhoPair:
    """Vectors for frequency ``xi != 0`` and parameter ``tau > 0``.

    In rotated coordinates ``xi~ = (|xi'|, 0, xi3)`` and

        rho1~ = (xi~1/2 - tau xi~3,  i|xi| sqrt(1/4 + tau^2), xi~3/2 + tau xi~1)
        rho2~ = (xi~1/2 + tau xi~3, -i|xi| sqrt(1/4 + tau^2), xi~3/2 - tau xi~1)
    """
    xi = np.asarray(xi, dtype=float)
    if tau <= 0:
        raise ValueError("tau must be positive")
    nrm = float(np.linalg.norm(xi))
    if nrm == 0.0:
        raise ValueError("xi must be nonzero; use make_zero_rho for xi = 0")
    rot = _rotation(xi)
    xt = rot @ xi
    im = nrm * np.sqrt(0.25 + tau ** 2)
    r1 = np.array([xt[0] / 2 - tau * xt[2], 1j * im, xt[2] / 2 + tau * xt[0]])
    r2 = np.array([xt[0] / 2 + tau * xt[2], -1j * im, xt[2] / 2 - tau * xt[0]])
    return RhoPair(xi, float(tau), rot.T @ r1, rot.T @ r2, rot)


def make_zero_rho(tau: float) -> RhoPair:
    """Pair for ``xi = 0``: ``rho1 = tau (0, i, 1)``, ``rho2 = -rho1``.

    Its sidebands sit at ``(0, 0, +-2 tau)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    r1 = tau * np.array([0.0, 1j, 1.0])
    return RhoPair(np.zeros(3), float(tau), r1, -r1, np.eye(3))


def rho_pair(xi, tau: float) -> RhoPair:
    """``make_rho`` for nonzero ``xi``, ``make_zero_rho`` otherwise."""
    xi = np.asarray(xi, dtype=float)
    return make_rho(xi, tau) if np.any(xi) else make_zero_rho(tau)


# --- periodized remainder solve ---------------------------------------------

def _support_box(fld: GridField, tol: float = 0.0):
    mask = np.abs(fld.values) > tol
    if not mask.any():
        return None
    dom = fld.domain
    lo, hi = [], []
    for d, ax in enumerate(dom.axes):
        other = tuple(e for e in range(3) if e != d)
        hit = np.flatnonzero(mask.any(axis=other))
        lo.append(ax[max(hit[0] - 1, 0)])
        hi.append(ax[min(hit[-1] + 1, len(ax) - 1)])
    return np.array(lo), np.array(hi)


def _corners(lo, hi):
    return np.array([[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])
                     for c in (lo[2], hi[2])])


def _odd_fast_len(n: int) -> int:
    m = n
    while True:
        m = next_fast_len(m)
        if m % 2:
            return m
        m += 1


class Torus:
    """Periodic grid in rotated coordinates with a half-step shift on axis 2.

    The x3 axis has an odd node count centred on 0 with nodes at multiples
    of the spacing, so the grid is mirror symmetric in x3.
    """

    def __init__(self, rotation, spacing, eval_box, support_box):
        self.rotation = rotation
        self.d = float(spacing)
        ev = _corners(*eval_box) @ rotation.T
        sp = _corners(*support_box) @ rotation.T
        ev_ext = ev.max(axis=0) - ev.min(axis=0)
        sp_ext = sp.max(axis=0) - sp.min(axis=0)
        need = np.maximum(2.0 * sp_ext, ev_ext + sp_ext) + 4 * self.d
        center = 0.5 * (ev.max(axis=0) + ev.min(axis=0))
        n = [next_fast_len(int(np.ceil(t / self.d))) for t in need]
        # odd count along x3: nodes at j*d symmetric about 0 and a frequency
        # set closed under k3 -> -k3, so reflection is exact
        n[2] = _odd_fast_len(n[2])
        self.n = tuple(n)
        self.lengths = np.array(n) * self.d
        origin = center - 0.5 * self.lengths
        origin[2] = -0.5 * (n[2] - 1) * self.d
        self.origin = origin
        k = [2 * np.pi * np.fft.fftfreq(m, d=self.d) for m in n]
        k[1] = k[1] + np.pi / self.lengths[1]
        self.k = k
        self.local = [self.d * np.arange(m) for m in n]
        # modulation turning the half-shifted series into an FFT
        self.mod = np.exp(-1j * np.pi * self.local[1] / self.lengths[1])[None, :, None]

    def points(self) -> np.ndarray:
        """Standard coordinates of every torus node, shape (N, 3)."""
        t = np.meshgrid(*[o + l for o, l in zip(self.origin, self.local)], indexing="ij")
        pts = np.stack([a.ravel() for a in t], axis=1)
        return pts @ self.rotation  # rotated -> standard is R^T

    def symbol(self, rho_t) -> np.ndarray:
        k1, k2, k3 = np.meshgrid(*self.k, indexing="ij")
        return k1 ** 2 + k2 ** 2 + k3 ** 2 + 2 * (rho_t[0] * k1 + rho_t[1] * k2 + rho_t[2] * k3)

    def forward(self, g):
        return fftn(g * self.mod, workers=-1)

    def inverse(self, ghat):
        return ifftn(ghat, workers=-1) / self.mod

    def evaluate(self, coeffs, domain: BoxDomain) -> np.ndarray:
        """Exact evaluation of ``sum c_k e^{ik.(t - origin)}`` at lattice nodes.

        The x3 nodes of ``domain`` must be torus nodes; the horizontal sum
        is done as a matrix product.
        """
        n1, n2, n3 = self.n
        x1, x2, x3 = domain.axes
        j3 = np.rint((x3 - self.origin[2]) / self.d).astype(np.int64)
        if np.abs(self.origin[2] + j3 * self.d - x3).max() > 1e-9 * self.d:
            raise LatticeError("lattice x3 nodes are not torus nodes")
        # inverse transform along x3 only (coefficients are already / N)
        c3 = np.fft.ifft(coeffs, axis=2) * n3
        c3 = c3[:, :, j3]
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        t1 = self.rotation[0, 0] * X1 + self.rotation[0, 1] * X2 - self.origin[0]
        t2 = self.rotation[1, 0] * X1 + self.rotation[1, 1] * X2 - self.origin[1]
        a = np.exp(1j * np.multiply.outer(t1.ravel(), self.k[0]))  # (p, n1)
        b = np.exp(1j * np.multiply.outer(t2.ravel(), self.k[1]))  # (p, n2)
        out = np.zeros((a.shape[0], len(j3)), dtype=complex)
        step = max(1, 4096 // max(len(j3), 1))
        for s in range(0, n1, step):
            blk = c3[s:s + step]  # (m, n2, J)
            m = blk.shape[0]
            tmp = b @ blk.transpose(1, 0, 2).reshape(n2, m * len(j3))
            out += np.einsum("pm,pmj->pj", a[:, s:s + step], tmp.reshape(-1, m, len(j3)))
        return out.reshape(len(x1), len(x2), len(j3))


@dataclass
class RemainderResult:
    field: GridField
    iterations: int
    change: float
    contraction: float
    coeffs: np.ndarray = field(repr=False)
    torus: Torus = field(repr=False)


def _torus_for(q_even: GridField, rotation, eval_domain: BoxDomain | None):
    dom = q_even.domain
    ev = eval_domain or dom
    sup = _support_box(q_even)
    if sup is None:
        sup = (np.array(ev.lower), np.array(ev.upper))
    return Torus(rotation, dom.h, (np.array(ev.lower), np.array(ev.upper)), sup)


def _sample_on_torus(q_even: GridField, torus: Torus) -> np.ndarray:
    dom = q_even.domain
    pts = torus.points()
    lo = np.array(dom.lower) - 1e-12
    hi = np.array(dom.upper) + 1e-12
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    out = np.zeros(len(pts), dtype=q_even.values.dtype)
    if inside.any():
        out[inside] = interp_cubic(q_even.values, dom.lower, dom.h, pts[inside])
    return out.reshape(torus.n)


def solve_remainder(q_even: GridField, rho, tau: float | None = None,
                    rotation=None, eval_domain: BoxDomain | None = None,
                    tol: float = ITER_TOL, max_iter: int = ITER_MAX) -> RemainderResult:
    """Fixed-point solve of ``Laplacian w + 2i rho.grad w = q (1 + w)``.

    Parameters
    ----------
    q_even : GridField
        Potential on a lattice symmetric about ``x3 = 0``, even in x3.
    rho : complex 3-vector
        Must satisfy ``rho . rho = 0``; ``Im rho`` must be horizontal.
    tau : float, optional
        Only used in error messages.
    rotation : (3, 3) array, optional
        Horizontal rotation taking ``Im rho`` to ``+-e2``; derived from
        ``rho`` when omitted.
    eval_domain : BoxDomain, optional
        Lattice on which ``w`` is returned (default: that of ``q_even``).

    Returns
    -------
    RemainderResult
        ``field`` holds ``w`` sampled exactly (as a trigonometric series) at
        the nodes of ``eval_domain``.
    """
    rho = np.asarray(rho, dtype=complex)
    dom = q_even.domain
    if not dom.is_symmetric:
        raise LatticeError("remainder solve needs a lattice symmetric about x3 = 0")
    im = rho.imag
    if abs(im[2]) > 1e-12 * np.linalg.norm(im):
        raise LatticeError("Im rho must be horizontal")
    if rotation is None:
        r = np.hypot(im[0], im[1])
        if r == 0.0:
            raise LatticeError("Im rho must be nonzero")
        # rotated e2 is Im rho / |Im rho|
        s, c = -im[0] / r, im[1] / r
        rotation = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    rotation = np.asarray(rotation, dtype=float)
    eval_domain = eval_domain or dom
    torus = _torus_for(q_even, rotation, eval_domain)
    rho_t = rotation @ rho
    sym = torus.symbol(rho_t)
    floor = np.abs(sym).min()
    if floor < SYMBOL_FLOOR:
        raise SymbolBreakdown(f"symbol magnitude {floor:.3e} below floor")
    qt = _sample_on_torus(q_even, torus)
    qmax = float(np.abs(qt).max(initial=0.0))
    contraction = qmax / floor
    if contraction > CONTRACTION_CAP:
        label = "" if tau is None else f" at tau={tau:g}"
        raise NonconvergentIteration(
            f"fixed point is not a safe contraction{label}: max|q| / min|symbol| = "
            f"{contraction:.3g} > {CONTRACTION_CAP}; increase tau")
    mult = -1.0 / sym
    ntot = float(np.prod(torus.n))
    w = np.zeros(torus.n, dtype=complex)
    what = np.zeros(torus.n, dtype=complex)
    change = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        what = mult * torus.forward(qt * (1.0 + w))
        w_new = torus.inverse(what)
        diff = np.sqrt(np.sum(np.abs(w_new - w) ** 2))
        size = np.sqrt(np.sum(np.abs(w_new) ** 2))
        w = w_new
        change = diff / size if size > 0 else diff
        if change <= tol:
            break
    else:
        raise NonconvergentIteration(f"no convergence after {max_iter} iterations "
                                     f"(last relative change {change:.3e})")
    vals = torus.evaluate(what / ntot, eval_domain)
    return RemainderResult(GridField(eval_domain, vals), it, float(change), contraction,
                           what / ntot, torus)


def apply_multiplier(source: np.ndarray, rho, rotation, torus: Torus) -> np.ndarray:
    """Apply ``-1 / (|k|^2 + 2 rho.k)`` to samples on the torus grid."""
    rho_t = np.asarray(rotation) @ np.asarray(rho, dtype=complex)
    return torus.inverse(-torus.forward(source) / torus.symbol(rho_t))


def conjugated_operator(w: np.ndarray, rho, rotation, torus: Torus) -> np.ndarray:
    """Spectral ``Laplacian w + 2i rho.grad w`` on the torus grid."""
    rho_t = np.asarray(rotation) @ np.asarray(rho, dtype=complex)
    return torus.inverse(-torus.symbol(rho_t) * torus.forward(w))


# --- reflected solutions ------------------------------------------------------

@dataclass
class CGOPair:
    """Reflected solutions ``v1`` (for q1) and ``v2`` (for q2) on the doubled box.

    ``v1 = e^{i rho1.x}(1 + w1) - e^{i rho1*.x}(1 + w1*)`` solves
    ``(Laplacian - q1) v1 = 0``; ``v2`` is the complex conjugate of the same
    construction for ``(rho2, q2)``, so ``v1 conj(v2)`` carries the phase
    ``e^{i xi.x}``.  ``w2`` is stored conjugated to match ``v2``.
    """

    rho: RhoPair
    w1: GridField
    w2: GridField
    w1_star: GridField
    w2_star: GridField
    v1: GridField
    v2: GridField
    residual_report: dict = field(default_factory=dict)

    @property
    def domain(self) -> BoxDomain:
        return self.v1.domain

    def on_box(self, box: BoxDomain | None = None):
        """``(v1, v2)`` restricted to the physical box (lower half by default)."""
        box = box or lower_half(self.domain)
        return self.v1.restrict(box), self.v2.restrict(box)


def plane_wave(domain: BoxDomain, vec) -> np.ndarray:
    """``exp(i vec.x)`` at every lattice node (``vec`` may be complex)."""
    x1, x2, x3 = domain.axes
    vec = np.asarray(vec, dtype=complex)
    return (np.exp(1j * vec[0] * x1)[:, None, None] * np.exp(1j * vec[1] * x2)[None, :, None]
            * np.exp(1j * vec[2] * x3)[None, None, :])


def reflected_solution(rho, w: GridField) -> GridField:
    """``e^{i rho.x}(1 + w) - e^{i rho*.x}(1 + w*)`` on a symmetric lattice."""
    dom = w.domain
    ws = reflect_field(w).values
    vals = plane_wave(dom, rho) * (1.0 + w.values) - plane_wave(dom, star(rho)) * (1.0 + ws)
    return GridField(dom, vals)


def pde_residual(v: GridField, q: GridField, box: BoxDomain | None = None) -> float:
    """``max |(Laplacian_h - q) v| / max |v|`` over interior nodes of ``box``."""
    if box is not None:
        v = v.restrict(box)
        q = q.restrict(box)
    res = laplacian7(v.values, v.domain.h) - q.values * v.values
    inner = (slice(1, -1),) * 3
    scale = float(np.abs(v.values).max())
    return float(np.abs(res[inner]).max() / scale) if scale > 0 else 0.0


def _ratio(a, b) -> float:
    return float(a / b) if b > 0 else 0.0


def assemble_pair(q1: GridField, q2: GridField, xi, tau: float, **solve_kw) -> CGOPair:
    """Reflected solutions for the frequency ``xi`` at parameter ``tau``.

    ``q1`` and ``q2`` are even extensions on the same symmetric lattice.
    """
    if q1.domain != q2.domain:
        raise LatticeError("potentials live on different lattices")
    rp = rho_pair(xi, tau)
    dom = q1.domain
    solve_kw.setdefault("rotation", rp.rotation)
    r1 = solve_remainder(q1, rp.rho1, tau, **solve_kw)
    r2 = solve_remainder(q2, rp.rho2, tau, **solve_kw)
    w1 = r1.field
    big_w2 = r2.field
    v1 = reflected_solution(rp.rho1, w1)
    v2 = GridField(dom, np.conj(reflected_solution(rp.rho2, big_w2).values))
    w2 = GridField(dom, np.conj(big_w2.values))
    box = lower_half(dom)
    plane = np.abs(v1.values[:, :, dom.cells[2] // 2]).max(), np.abs(v2.values[:, :, dom.cells[2] // 2]).max()
    report = {
        "iterations": (r1.iterations, r2.iterations),
        "contraction": (r1.contraction, r2.contraction),
        "plane_max": plane,
        "plane_rel": (_ratio(plane[0], np.abs(v1.values).max()), _ratio(plane[1], np.abs(v2.values).max())),
        "residual_v1": pde_residual(v1, q1, box),
        "residual_v2": pde_residual(v2, q2, box),
        "w1_l2": w1.norm_l2(),
        "w2_l2": w2.norm_l2(),
    }
    return CGOPair(rp, w1, w2, reflect_field(w1), reflect_field(w2), v1, v2, report)
