import math
import warnings

import numpy as np
import pytest

from calderon_lab.cgo import assemble_pair
from calderon_lab.domain import BoxDomain, GridField, box_indicator, build_box, even_reflect, smooth_bump
from calderon_lab.errors import ScheduleInfeasible
from calderon_lab.forward import ForwardSolver
from calderon_lab.norms import TraceBasis, fourier_transform
from calderon_lab.recovery import (GAUSS_C0, Schedule, canonical, default_gamma_exponent, even_transform,
                                   estimate_fourier_mode, feasible_radius, frequency_cube,
                                   gaussian_transform, h_minus1_chain, inequality_chain, invert_modes,
                                   make_schedule, mollify_bound, mollify_constants, recover_q0,
                                   remainder_integral, truncation_baseline)

CENTER = (0.5, 0.5, -0.5)


def test_schedule_values():
    with pytest.warns(RuntimeWarning):
        s = make_schedule(0.1, alpha=1.0, n=3)
    assert s.alpha_tilde == 1.0 and s.clamped and s.freq_radius == 2.0
    assert s.tau_of(2.0) == 32.0 and s.tau == 32.0
    assert Schedule.eps_of(0.0) == 1.0
    assert np.isclose(s.eps, (1 + 4 * 32.0 ** 2) ** -0.25)
    assert default_gamma_exponent(1.0) == pytest.approx(1 / 12)


def test_schedule_below_threshold():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = make_schedule(1e-40, alpha=0.5, delta_tilde=1e-3, gamma_exponent=0.5)
    assert s.alpha_tilde == 0.5 and not s.clamped
    assert np.isclose(s.freq_radius, abs(math.log(1e-40)) ** 0.5)
    assert np.isclose(s.tau, s.freq_radius ** 10)


def test_schedule_rejects_bad_alpha():
    with pytest.raises(ValueError):
        make_schedule(1e-3, alpha=1.5)


@pytest.mark.parametrize("eps", [0.05, 0.2, 0.7])
def test_gaussian_identity(eps):
    for xi in ([0, 0, 0], [3.0, -1.0, 2.0], [10.0, 5.0, 0.0]):
        expect = math.exp(-eps ** 2 * np.dot(xi, xi) * GAUSS_C0)
        assert abs(gaussian_transform(eps, xi) - expect) <= 1e-10


def test_mollify_zero_function():
    dom = BoxDomain((-0.5, -0.5, -0.5), (1.5, 1.5, 1.5), (32, 32, 32))
    lhs, rhs = mollify_bound(GridField.zeros(dom), 0.1, [5.0, 0, 0], alpha=0.9)
    assert lhs == 0.0 <= rhs


def test_mollify_rhs_range_checked():
    dom = BoxDomain((-0.5, -0.5, -0.5), (1.5, 1.5, 1.5), (32, 32, 32))
    cst = mollify_constants(box_indicator(dom, (0, 0, 0), (1, 1, 1)), alpha=0.9)
    with pytest.raises(ValueError):
        cst.rhs(cst.eps0 * 2, [1, 0, 0])


def test_mollify_constants_dominate_l1():
    dom = BoxDomain((-0.5, -0.5, -0.5), (1.5, 1.5, 1.5), (32, 32, 32))
    f = box_indicator(dom, (0, 0, 0), (1, 1, 1))
    cst = mollify_constants(f, alpha=0.9)
    assert cst.C >= f.norm_l1() and 0 < cst.eps0 <= 0.5


def test_frequency_cube_and_canonical():
    half = build_box((0, 0, -1), (1, 1, 0), 16)
    pts = frequency_cube(half, 4.0)
    assert np.all(np.abs(pts[:, 2]) < 4.0) and np.all(np.hypot(pts[:, 0], pts[:, 1]) < 4.0)
    keys = {canonical(p) for p in pts}
    assert (0.0, 0.0, 0.0) in keys
    for a, b, c in keys:
        assert c >= 0 and (a > 0 or (a == 0 and b >= 0))
    assert canonical((-1.0, 2.0, -3.0)) == (1.0, -2.0, 3.0)


def test_truncation_baseline_monotone():
    half = build_box((0, 0, -1), (1, 1, 0), 16)
    q0 = GridField.from_function(half, smooth_bump(CENTER, 0.4))
    b = [truncation_baseline(q0, r) for r in (2, 4, 8)]
    assert 1 >= b[0] >= b[1] >= b[2] >= 0


def test_inversion_is_even():
    dom = BoxDomain((0, 0, -1), (1, 1, 1), (8, 8, 16))
    half = build_box((0, 0, -1), (1, 1, 0), 8)
    vals = {(0.0, 0.0, 0.0): 1.0, (np.pi, 0.0, np.pi / 2): 0.3 - 0.2j, (0.0, np.pi, 0.0): 0.5j}
    # evaluate the orbit sum on a symmetric lattice by reusing the half-box routine
    lower = invert_modes(half, vals).values
    upper = invert_modes(BoxDomain((0, 0, 0), (1, 1, 1), (8, 8, 8)), vals).values
    np.testing.assert_allclose(lower[:, :, ::-1], upper, atol=1e-14)
    assert dom.is_symmetric


@pytest.fixture(scope="module")
def pair16():
    half = build_box((0, 0, -1), (1, 1, 0), 16)
    q1 = GridField.from_function(half, lambda a, b, c: 1 + smooth_bump(CENTER, 0.4)(a, b, c))
    q2 = GridField.from_function(half, lambda a, b, c: 1 + 0 * a)
    basis = TraceBasis(half, 4)
    D = ForwardSolver(half, q=q1).dtn(basis) - ForwardSolver(half, q=q2).dtn(basis)
    return half, q1, q2, D


def test_identical_potentials_give_zero(pair16):
    half, q1, _, _ = pair16
    basis = TraceBasis(half, 4)
    D = ForwardSolver(half, q=q1).dtn(basis) - ForwardSolver(half, q=q1).dtn(basis)
    e = even_reflect(q1)
    pair = assemble_pair(e, e, (np.pi, 0, np.pi / 2), 2.0)
    est = estimate_fourier_mode(D, pair, GridField.zeros(half))
    assert abs(est.estimate) <= 1e-12


def test_estimate_decomposition(pair16):
    half, q1, q2, D = pair16
    pair = assemble_pair(even_reflect(q1), even_reflect(q2), (np.pi, 0, np.pi / 2), 2.0)
    q0 = GridField(half, q1.values - q2.values)
    est = estimate_fourier_mode(D, pair, q0)
    assert est.estimate == est.boundary_term - est.remainder_term + sum(est.sideband_terms)
    assert est.oracle == pytest.approx(even_transform(q0, est.xi))
    assert est.error < 0.2 * abs(est.oracle)
    row = est.row()
    assert set(row) >= {"xi1", "xi2", "xi3", "tau", "eps", "re_boundary", "im_estimate", "re_oracle"}


def test_remainder_term_decays(pair16):
    half, q1, q2, _ = pair16
    q0 = GridField(half, q1.values - q2.values)
    vals = []
    taus = [4.0, 8.0, 16.0]
    for tau in taus:
        pair = assemble_pair(even_reflect(q1), even_reflect(q2), (np.pi, 0, np.pi / 2), tau)
        vals.append(abs(remainder_integral(q0, pair)))
    slope = np.polyfit(np.log(taus), np.log(vals), 1)[0]
    assert slope <= -0.8


def test_even_transform_matches_reflected_field():
    half = build_box((0, 0, -1), (1, 1, 0), 8)
    q0 = GridField.from_function(half, smooth_bump(CENTER, 0.4))
    full = even_reflect(q0)
    xi = [1.0, 2.0, 3.0]
    # trapezoid on the doubled box counts the plane once, the half-box sum twice
    plane = q0.domain.weights[:, :, -1] * q0.values[:, :, -1]
    direct = fourier_transform(full, xi)[0]
    x1, x2, _ = half.axes
    ph = np.exp(1j * xi[0] * x1)[:, None] * np.exp(1j * xi[1] * x2)[None, :]
    assert np.isclose(even_transform(q0, xi), direct + (plane * ph).sum(), rtol=1e-12)


def test_zero_difference_recovers_zero(pair16):
    half, q1, _, _ = pair16
    basis = TraceBasis(half, 4)
    D = ForwardSolver(half, q=q1).dtn(basis) - ForwardSolver(half, q=q1).dtn(basis)
    sched = make_schedule(1e-300, delta_tilde=1.0, gamma_exponent=0.3)
    sched = Schedule(**{**sched.__dict__, "freq_radius": 2.0})
    res = recover_q0(D, sched, q1, q1, tau=2.0)
    assert np.abs(res.q0_hat.values).max() <= 1e-12


def test_infeasible_schedule_reports_radius(pair16):
    half, q1, q2, D = pair16
    with pytest.warns(RuntimeWarning):
        sched = make_schedule(0.5)
    with pytest.raises(ScheduleInfeasible) as info:
        recover_q0(D, sched, q1, q2)
    assert info.value.feasible_radius == pytest.approx(feasible_radius(half.h, 1.0))
    assert info.value.feasible_radius < sched.freq_radius


@pytest.mark.parametrize("mode", ["validation", "blind"])
def test_recovery_beats_baseline(pair16, mode):
    half, q1, q2, D = pair16
    with pytest.warns(RuntimeWarning):
        sched = make_schedule(0.5, r0=4.0)
    res = recover_q0(D, sched, q1, q2, mode=mode, tau=2.0)
    assert res.rel_error <= res.baseline + 0.5
    assert res.imag_residue <= 1e-12
    if mode == "blind":
        assert all(e.radius >= 0 for e in res.estimates)


def test_inequality_chain_single_constant(pair16):
    half, q1, q2, _ = pair16
    q0 = GridField(half, q1.values - q2.values)
    samples = [((a, 0.0, c), t) for a in (0.0, np.pi) for c in (0.0, np.pi / 2) for t in (1.0, 4.0)]
    C, ratios = inequality_chain(q0, 1e-3, samples, 1.0)
    assert C == ratios.max() and np.all(ratios <= C)


def test_h_minus1_chain():
    C, br = h_minus1_chain(0.1, 1e-6, [1.0, 2.0, 3.0], 1.0, lambda r: r ** 5)
    assert np.all(0.1 <= C * br * (1 + 1e-12))
