"""Fourier-mode estimates of a potential difference from boundary data.

For reflected solutions ``v1``, ``v2`` (see :mod:`calderon_lab.cgo`) the
pairing of the DtN difference equals ``int q0 v1 conj(v2)``.  Expanding
``v1 conj(v2)`` gives

    int q0 v1 conj(v2) = F q0e(xi) + R - F q0e(xi', 2 tau |xi'|)

where ``q0e`` is the even extension of ``q0`` across ``x3 = 0``, ``R``
collects every term carrying a remainder ``w`` and the last term is the sum
of the two sideband integrals.  The estimate of ``F q0e(xi)`` is therefore
``boundary - R + sidebands``.

Transform convention: ``F f(xi) = int f(x) exp(i xi.x) dx``.  Under it the
Gaussian ``G_eps(x) = eps^-n exp(-pi |x|^2 / eps^2)`` has
``F G_eps(xi) = exp(-eps^2 |xi|^2 / (4 pi))``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .cgo import CGOPair, assemble_pair, plane_wave, rho_pair
from .domain import BoxDomain, BoundaryTrace, GridField, even_reflect, lower_half
from .errors import LatticeError, NonconvergentIteration, ScheduleInfeasible
from .norms import HolderModulus, fourier_transform, translation_modulus

GAUSS_C0 = 1.0 / (4.0 * np.pi)
RESOLUTION_CAP = 1.0


# --- schedules ----------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Frequency radius, CGO parameter and mollification width.

    ``tau = R ** ((n + 2) / alpha_tilde)`` and ``eps = (1 + 4 tau^2) ** -1/4``.
    """

    alpha: float
    alpha_tilde: float
    gamma_exponent: float
    freq_radius: float
    tau: float
    eps: float
    n: int = 3
    delta: float = float("nan")
    clamped: bool = False

    def tau_of(self, radius: float) -> float:
        return float(radius ** ((self.n + 2) / self.alpha_tilde))

    @staticmethod
    def eps_of(tau: float) -> float:
        return float((1.0 + 4.0 * tau ** 2) ** -0.25)


def default_gamma_exponent(alpha_tilde: float, n: int = 3) -> float:
    return alpha_tilde / (2.0 * (n + 2 + alpha_tilde))


def make_schedule(delta: float, alpha: float = 1.0, n: int = 3,
                  gamma_exponent: float | None = None, r0: float = 2.0,
                  delta_tilde: float | None = None) -> Schedule:
    """Schedule driven by the boundary-data distance ``delta``.

    ``R = |log delta| ** gamma``.  When ``delta >= delta_tilde`` (default
    ``exp(-r0 ** (1 / gamma))``) the radius is clamped to ``r0`` with a
    warning.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    a_t = min(alpha, (n - 1) / 2.0)
    g = default_gamma_exponent(a_t, n) if gamma_exponent is None else float(gamma_exponent)
    if g <= 0:
        raise ValueError("gamma exponent must be positive")
    if delta_tilde is None:
        delta_tilde = math.exp(-r0 ** (1.0 / g)) if r0 ** (1.0 / g) < 745 else 0.0
    clamped = not (0.0 < delta < delta_tilde)
    if clamped:
        warnings.warn(f"delta={delta:.3e} is not below the threshold {delta_tilde:.3e}; "
                      f"frequency radius clamped to {r0}", RuntimeWarning, stacklevel=2)
        radius = float(r0)
    else:
        radius = float(abs(math.log(delta)) ** g)
    tau = radius ** ((n + 2) / a_t)
    return Schedule(alpha, a_t, g, radius, tau, Schedule.eps_of(tau), n, float(delta), clamped)


# --- mollification bound --------------------------------------------------------

def gaussian_moment(alpha: float, n: int = 3) -> float:
    """``int exp(-pi |z|^2) |z|^alpha dz`` over R^n."""
    sphere = 2.0 * np.pi ** (n / 2) / gamma_fn(n / 2)
    return float(sphere * gamma_fn((n + alpha) / 2) / (2.0 * np.pi ** ((n + alpha) / 2)))


def gaussian_tail(radius: float, eps: float, n: int = 3) -> float:
    """Mass of ``G_eps`` outside the ball of the given radius."""
    return float(gammaincc(n / 2, np.pi * radius ** 2 / eps ** 2))


@dataclass(frozen=True)
class MollifyConstants:
    """Constants of the bound ``|F f(xi)| <= C (exp(-c0 eps^2 |xi|^2) + eps^alpha)``."""

    C: float
    alpha: float
    eps0: float
    l1: float
    C0: float
    C5: float
    modulus: HolderModulus | None = field(default=None, repr=False)

    def rhs(self, eps: float, xi) -> float:
        if not 0.0 < eps < self.eps0:
            raise ValueError(f"eps={eps} outside (0, {self.eps0})")
        k2 = float(np.sum(np.asarray(xi, dtype=float) ** 2))
        return self.C * (math.exp(-GAUSS_C0 * eps ** 2 * k2) + eps ** self.alpha)

    def best_rhs(self, xi, samples: int = 400) -> float:
        """Smallest right-hand side over ``eps`` in ``(0, eps0)``."""
        grid = self.eps0 * np.geomspace(1e-4, 1.0 - 1e-9, samples)
        return min(self.rhs(e, xi) for e in grid)


def default_offsets(domain: BoxDomain, count: int = 8, max_steps: int | None = None):
    """Axis and diagonal lattice offsets of 1..max_steps cells."""
    max_steps = max_steps or max(2, min(domain.cells) // 8)
    steps = np.unique(np.rint(np.geomspace(1, max_steps, count)).astype(int))
    dirs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, 0, 1], [1, 1, 1]])
    return np.concatenate([s * domain.h * dirs for s in steps])


def mollify_constants(f: GridField, alpha: float | None = None, offsets=None,
                      n: int = 3) -> MollifyConstants:
    """Assemble ``C`` from the L1 norm and the sampled translation modulus.

    ``C = max(||f||_1, C0 M_alpha + C5)`` where ``M_alpha`` is the Gaussian
    moment of order ``alpha``, ``C0`` the envelope of ``g(y) / |y|^alpha``
    over the sampled offsets (``|y| <= delta``) and ``C5`` the supremum over
    ``eps < eps0`` of ``2 ||f||_1 tail(delta, eps) / eps^alpha``.
    """
    offsets = default_offsets(f.domain) if offsets is None else offsets
    mod = translation_modulus(f, offsets)
    a = mod.alpha if alpha is None else float(alpha)
    a = min(max(a, 1e-3), 1.0)
    l1 = f.norm_l1()
    delta = mod.delta
    eps0 = min(delta, 0.5)
    c0 = mod.envelope_constant(a)
    grid = eps0 * np.geomspace(1e-4, 1.0, 2000)
    c5 = max(2.0 * l1 * gaussian_tail(delta, e, n) / e ** a for e in grid)
    C = max(l1, c0 * gaussian_moment(a, n) + c5)
    return MollifyConstants(C, a, eps0, l1, c0, c5, mod)


def mollify_bound(f: GridField, eps: float, xi, alpha: float | None = None,
                  constants: MollifyConstants | None = None):
    """``(lhs, rhs)`` with ``lhs = |F_h f(xi)|`` and the assembled bound."""
    cst = constants or mollify_constants(f, alpha)
    lhs = float(np.abs(fourier_transform(f, xi)[0]))
    return lhs, cst.rhs(eps, xi)


def gaussian_transform(eps: float, xi, half_width: float = 8.0, cells: int = 64) -> complex:
    """Quadrature of ``F G_eps(xi)`` on a lattice covering ``|x| <= half_width eps``."""
    L = half_width * eps
    ax = np.linspace(-L, L, cells + 1)
    h = ax[1] - ax[0]
    g1 = np.exp(-np.pi * ax ** 2 / eps ** 2) / eps
    xi = np.asarray(xi, dtype=float)
    out = 1.0 + 0j
    for d in range(3):
        out *= h * np.sum(g1 * np.exp(1j * xi[d] * ax))
    return complex(out)


# --- per-mode estimates ----------------------------------------------------------

@dataclass
class FourierEstimate:
    """Estimate of ``F q0e(xi)`` and the terms it is assembled from."""

    xi: np.ndarray
    tau: float
    eps: float
    boundary_term: complex
    remainder_term: complex
    sideband_terms: tuple
    estimate: complex
    oracle: complex | None = None
    radius: float = 0.0
    projection_loss: float = 0.0
    mode: str = "validation"

    @property
    def error(self) -> float:
        return float("nan") if self.oracle is None else abs(self.estimate - self.oracle)

    def row(self) -> dict:
        o = self.oracle
        return {
            "xi1": self.xi[0], "xi2": self.xi[1], "xi3": self.xi[2],
            "tau": self.tau, "eps": self.eps,
            "re_boundary": self.boundary_term.real, "im_boundary": self.boundary_term.imag,
            "re_remainder": self.remainder_term.real, "im_remainder": self.remainder_term.imag,
            "re_estimate": self.estimate.real, "im_estimate": self.estimate.imag,
            "re_oracle": "" if o is None else o.real, "im_oracle": "" if o is None else o.imag,
            "radius": self.radius, "mode": self.mode,
        }


def even_transform(q0: GridField, xi) -> complex:
    """``F q0e(xi)`` computed on the half box: ``int q0 (e^{i xi.x} + e^{i xi*.x})``."""
    xi = np.asarray(xi, dtype=float)
    xs = xi * np.array([1.0, 1.0, -1.0])
    return complex(fourier_transform(q0, np.stack([xi, xs])).sum())


def _trace(fld: GridField) -> BoundaryTrace:
    return BoundaryTrace.from_field(fld)


def remainder_integral(q0: GridField, pair: CGOPair) -> complex:
    """``int q0 R`` over the half box, ``R`` being the sum of all ``w`` terms."""
    box = q0.domain
    rp = pair.rho
    w1 = pair.w1.restrict(box).values
    w1s = pair.w1_star.restrict(box).values
    big_w2 = np.conj(pair.w2.restrict(box).values)
    big_w2s = np.conj(pair.w2_star.restrict(box).values)
    up, down = rp.sideband_frequencies
    f = (plane_wave(box, rp.xi) * (w1 + big_w2 + w1 * big_w2)
         + plane_wave(box, rp.xi_star) * (w1s + big_w2s + w1s * big_w2s)
         - plane_wave(box, up) * (w1 + big_w2s + w1 * big_w2s)
         - plane_wave(box, down) * (w1s + big_w2 + w1s * big_w2))
    return complex((box.weights * q0.values * f).sum())


def sideband_integrals(q0: GridField, pair: CGOPair):
    up, down = pair.rho.sideband_frequencies
    s = fourier_transform(q0, np.stack([up, down]))
    return complex(s[0]), complex(s[1])


def estimate_fourier_mode(D, pair: CGOPair, q0: GridField, mode: str = "validation",
                          sideband=None) -> FourierEstimate:
    """Estimate ``F q0e(xi)`` for the frequency carried by ``pair``.

    Parameters
    ----------
    D : PartialDtN
        Difference ``Lambda_1 - Lambda_2`` on the half box ``q0.domain``.
    pair : CGOPair
        Reflected solutions on the doubled box.
    q0 : GridField
        ``q1 - q2`` on the half box; used for the remainder integral and,
        in validation mode, for the sideband values and the oracle.
    mode : {"validation", "blind"}
    sideband : (value, radius), optional
        Blind-mode sideband value and uncertainty radius; default ``(0, 0)``.
    """
    box = q0.domain
    v1, v2 = pair.on_box(box)
    f, g = _trace(v1), _trace(v2)
    loss = 0.0
    if D.sources:
        boundary = D.pair(f, g)
        if D.basis is not None:
            loss = D.basis.projection_loss(f.restricted_to_gamma())
    elif D.basis is not None:
        cf = D.basis.coefficients(f)
        cg = D.basis.coefficients(g)
        boundary = D.pair_coefficients(cf, cg)
        loss = D.basis.projection_loss(f.restricted_to_gamma())
    else:
        raise LatticeError("DtN has neither solvers nor a basis")
    if loss > 0.01 and not D.sources:
        warnings.warn(f"trace basis misses {100 * loss:.1f}% of the CGO trace energy",
                      RuntimeWarning, stacklevel=2)
    remainder = remainder_integral(q0, pair)
    oracle = None
    radius = 0.0
    if mode == "validation":
        sides = sideband_integrals(q0, pair)
        oracle = even_transform(q0, pair.rho.xi)
    elif mode == "blind":
        value, radius = sideband if sideband is not None else (0.0, 0.0)
        sides = (complex(value), 0j)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    est = boundary - remainder + sides[0] + sides[1]
    eps = Schedule.eps_of(pair.rho.tau)
    return FourierEstimate(np.asarray(pair.rho.xi, dtype=float), pair.rho.tau, eps,
                           complex(boundary), remainder, sides, complex(est), oracle,
                           float(radius), loss, mode)


# --- frequency lattice and inversion ----------------------------------------------

def padded_shape(half: BoxDomain):
    """Node counts of the twice-padded periodic lattice of the doubled box."""
    return (2 * half.cells[0], 2 * half.cells[1], 4 * half.cells[2])


def frequency_cube(half: BoxDomain, radius: float) -> np.ndarray:
    """Lattice frequencies of the padded doubled box inside ``Z_R``.

    ``Z_R = {|xi3| < R, |xi'| < R}``; rows are sorted for deterministic
    reductions.
    """
    h = half.h
    axes = []
    for n in padded_shape(half):
        step = 2 * np.pi / (n * h)
        m = int(np.floor(radius / step)) + 1
        k = step * np.arange(-m, m + 1)
        axes.append(k)
    k1, k2, k3 = np.meshgrid(*axes, indexing="ij")
    keep = (np.abs(k3) < radius) & (np.hypot(k1, k2) < radius)
    pts = np.stack([k1[keep], k2[keep], k3[keep]], axis=1)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    return pts[order]


def canonical(xi) -> tuple:
    """Representative of ``xi`` under ``xi3 -> -xi3`` and ``xi -> -xi``."""
    a, b, c = (float(v) for v in xi)
    c = abs(c)
    if a < 0 or (a == 0 and b < 0):
        a, b = -a, -b
    return (a + 0.0, b + 0.0, c + 0.0)


def truncation_baseline(q0: GridField, radius: float) -> float:
    """``||(1 - chi_Z) F q0e|| / ||F q0e||`` on the padded frequency lattice."""
    half = q0.domain
    full = even_reflect(q0)
    arr = np.zeros(padded_shape(half), dtype=complex)
    n1, n2, n3 = full.domain.shape
    arr[:n1, :n2, :n3] = full.values * full.domain.weights / half.h ** 3
    power = np.abs(np.fft.fftn(arr)) ** 2
    k = [2 * np.pi * np.fft.fftfreq(n, d=half.h) for n in arr.shape]
    k1, k2, k3 = np.meshgrid(*k, indexing="ij")
    inside = (np.abs(k3) < radius) & (np.hypot(k1, k2) < radius)
    total = power.sum()
    return float(np.sqrt(power[~inside].sum() / total)) if total > 0 else 0.0


def invert_modes(half: BoxDomain, values: dict) -> GridField:
    """Truncated inverse transform on the half box.

    ``values`` maps canonical frequencies to ``F q0e``; the field is
    ``(1/V) sum F(xi) e^{-i xi.x}`` over the full symmetric orbit.
    """
    h = half.h
    vol = float(np.prod(padded_shape(half))) * h ** 3
    x1, x2, x3 = half.axes
    out = np.zeros(half.shape, dtype=complex)
    for key in sorted(values):
        a, b, c = key
        val = values[key]
        orbit = {(a, b, c), (a, b, -c), (-a, -b, c), (-a, -b, -c)}
        for (p, r, s) in sorted(orbit):
            v = val if (p, r) == (a, b) else np.conj(val)
            out += v * (np.exp(-1j * p * x1)[:, None, None] * np.exp(-1j * r * x2)[None, :, None]
                        * np.exp(-1j * s * x3)[None, None, :])
    return GridField(half, out / vol)


@dataclass
class RecoveryResult:
    q0_hat: GridField
    estimates: list
    schedule: Schedule
    tau: float
    imag_residue: float
    baseline: float | None = None
    rel_error: float | None = None

    def rows(self):
        return [e.row() for e in self.estimates]


def feasible_radius(h: float, alpha_tilde: float, n: int = 3, cap: float = RESOLUTION_CAP) -> float:
    """Largest R whose scheduled ``tau(R)`` keeps ``|rho| h <= cap`` on ``Z_R``."""
    def ok(r):
        tau = r ** ((n + 2) / alpha_tilde)
        return math.sqrt(2.0) * math.sqrt(2.0) * r * math.sqrt(0.25 + tau ** 2) * h <= cap
    lo, hi = 0.0, 64.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def recover_q0(D, schedule: Schedule, q1: GridField, q2: GridField, mode: str = "validation",
               tau: float | None = None, workers: int = 1, prior: MollifyConstants | None = None):
    """Estimate ``F q0e`` on ``Z_R`` and invert to a field on the half box.

    ``tau=None`` uses the scheduled value, which must be resolvable on the
    lattice (``|rho| h <= 1`` for every mode) or ``ScheduleInfeasible`` is
    raised with the largest feasible radius.  A finite ``tau`` overrides
    the schedule.
    """
    half = q1.domain
    radius = schedule.freq_radius
    if tau is None:
        tau = schedule.tau
        rmax = feasible_radius(half.h, schedule.alpha_tilde, schedule.n)
        if radius > rmax:
            raise ScheduleInfeasible(
                f"scheduled tau={tau:.3g} at R={radius:.3g} is not resolvable at h={half.h:.3g}",
                rmax)
    q0 = GridField(half, q1.values - q2.values)
    q1e, q2e = even_reflect(q1), even_reflect(q2)
    keys = sorted({canonical(x) for x in frequency_cube(half, radius)})

    def run(key, sideband=None):
        try:
            pair = assemble_pair(q1e, q2e, np.array(key), tau)
        except NonconvergentIteration as exc:
            raise ScheduleInfeasible(str(exc), 0.0) from exc
        return estimate_fourier_mode(D, pair, q0, mode, sideband)

    zero = (0.0, 0.0, 0.0)
    results = {}
    if mode == "blind":
        prior = prior or mollify_constants(even_reflect(q0))
        eps = Schedule.eps_of(tau)

        def side(key):
            xi = np.array(key)
            rp = rho_pair(xi, tau)
            up, _ = rp.sideband_frequencies
            if np.hypot(xi[0], xi[1]) == 0.0 and xi[2] != 0.0:
                z = results[zero]
                return z.estimate.real, z.radius + 0.0
            return 0.0, prior.best_rhs(up)

        if zero in keys:
            results[zero] = run(zero, side(zero))
        rest = [k for k in keys if k != zero]
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for k, est in zip(rest, pool.map(lambda k: run(k, side(k)), rest)):
                results[k] = est
    else:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for k, est in zip(keys, pool.map(run, keys)):
                results[k] = est
    values = {}
    for k in keys:
        v = results[k].estimate
        a, b, _ = k
        values[k] = complex(v.real, 0.0) if (a, b) == (0.0, 0.0) else v
    field_c = invert_modes(half, values)
    imag = float(np.abs(field_c.values.imag).max())
    qhat = GridField(half, field_c.values.real.copy())
    base = truncation_baseline(q0, radius)
    nrm = q0.norm_l2()
    rel = qhat.with_values(qhat.values - q0.values).norm_l2() / nrm if nrm > 0 else None
    ordered = [results[k] for k in keys]
    return RecoveryResult(qhat, ordered, schedule, float(tau), imag, base, rel)


# --- empirical inequality chains ---------------------------------------------------

def inequality_chain(q0: GridField, delta: float, samples, alpha: float):
    """Fit one constant ``C`` for the per-mode chain.

    ``samples`` is a list of ``(xi, tau)``; for each the bracket is
    ``exp(|xi| tau) delta + exp(-c0 eps^2 (1 + 4 tau^2) |xi'|^2) + eps^alpha + 1/tau``
    with ``eps = (1 + 4 tau^2)^-1/4``.  Returns ``(C, ratios)`` where
    ``C = max |F q0e(xi)| / bracket``.
    """
    ratios = []
    for xi, tau in samples:
        xi = np.asarray(xi, dtype=float)
        eps = Schedule.eps_of(tau)
        kp2 = xi[0] ** 2 + xi[1] ** 2
        bracket = (math.exp(min(np.linalg.norm(xi) * tau, 700.0)) * delta
                   + math.exp(-GAUSS_C0 * eps ** 2 * (1 + 4 * tau ** 2) * kp2)
                   + eps ** alpha + 1.0 / tau)
        ratios.append(abs(even_transform(q0, xi)) / bracket)
    ratios = np.asarray(ratios)
    return float(ratios.max()), ratios


def h_minus1_chain(norm: float, delta: float, radii, alpha_tilde: float, tau_of,
                   c: float = 1.0, n: int = 3):
    """Constant ``C`` with ``norm <= C {R^{n/2} e^{c R tau/2} delta + R^{n/2} tau^{-a/2} + 1/R}``
    for every radius, and the per-radius brackets."""
    brackets = []
    for r in radii:
        tau = tau_of(r)
        growth = math.exp(min(c * r * tau / 2.0, 700.0))
        brackets.append(r ** (n / 2) * growth * delta + r ** (n / 2) * tau ** (-alpha_tilde / 2)
                        + 1.0 / r)
    brackets = np.asarray(brackets)
    return float((norm / brackets).max()), brackets
