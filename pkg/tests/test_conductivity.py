import numpy as np
import pytest

from calderon_lab.conductivity import (AGREEMENT_TOL, ConductivityPair, boundary_agreement, gamma_dtn,
                                       gamma_to_q, norm_transfer_check, normal_derivative,
                                       perturbation_family, relate_dtn)
from calderon_lab.domain import GridField, build_box, even_reflect, smooth_bump
from calderon_lab.errors import BoundaryAgreementError, LatticeError, NonpositiveConductivity
from calderon_lab.forward import assemble_dtn
from calderon_lab.norms import TraceBasis

# bumps keep a clearance of more than two cells from the accessible faces
BUMP = smooth_bump((0.5, 0.5, -0.5), 0.35, 0.8)
PERTURB = smooth_bump((0.45, 0.55, -0.5), 0.25)


def box(n):
    return build_box((0, 0, -1), (1, 1, 0), n)


def field(dom, fn):
    return GridField.from_function(dom, fn)


@pytest.mark.parametrize("value", [1.0, 4.0, 0.3])
def test_constant_gamma_gives_zero_q(value):
    d = box(8)
    assert np.abs(gamma_to_q(field(d, lambda a, b, c: value + 0 * a)).values).max() <= 1e-12


@pytest.mark.parametrize("fn,expect", [(lambda a, b, c: np.exp(a), 0.25),
                                       (lambda a, b, c: np.exp(a + c), 0.5)], ids=["x1", "x1+x3"])
def test_exponential_gamma_second_order(fn, expect):
    errs = [np.abs(gamma_to_q(field(box(n), fn)).values - expect).max() for n in (16, 32)]
    assert errs[1] <= 1e-3
    assert errs[0] / errs[1] > 3.5


def test_nonpositive_gamma_rejected():
    d = box(8)
    with pytest.raises(NonpositiveConductivity):
        gamma_to_q(field(d, lambda a, b, c: a - 0.5))
    with pytest.raises(NonpositiveConductivity):
        gamma_to_q(GridField(d, np.ones(d.shape, dtype=complex)))


def test_normal_derivative_of_linear_field():
    d = box(8)
    nd = normal_derivative(field(d, lambda a, b, c: 2 * a - 3 * c))
    part = d.partition
    owner = part.face_map.ravel()[part.boundary_nodes]
    # outward normals: -x1, +x1, -x2, +x2, -x3, +x3
    expect = {0: -2.0, 1: 2.0, 2: 0.0, 3: 0.0, 4: 3.0, 5: -3.0}
    for fid, val in expect.items():
        np.testing.assert_allclose(nd[owner == fid], val, atol=1e-12)


def test_reflection_commutes_with_reduction():
    d = box(16)
    g = field(d, lambda a, b, c: 1 + BUMP(a, b, c))
    qh = gamma_to_q(g).values
    qf = gamma_to_q(even_reflect(g))
    assert qf.is_even_in_x3(atol=1e-12)
    n3 = d.shape[2]
    np.testing.assert_allclose(qf.values[:, :, :n3 - 1], qh[:, :, :-1], atol=1e-12)


def test_unit_gamma_matches_laplace_dtn():
    d = box(8)
    B = TraceBasis(d, 3)
    g = field(d, lambda a, b, c: 1 + 0 * a)
    np.testing.assert_allclose(relate_dtn(gamma_dtn(g, B), g).matrix,
                               assemble_dtn(GridField.zeros(d), B).matrix, atol=1e-12)


def test_scaled_gamma_matches_laplace_dtn():
    d = box(8)
    B = TraceBasis(d, 3)
    g = field(d, lambda a, b, c: 4 + 0 * a)
    np.testing.assert_allclose(gamma_dtn(g, B).matrix, 4 * assemble_dtn(GridField.zeros(d), B).matrix,
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(relate_dtn(gamma_dtn(g, B), g).matrix,
                               assemble_dtn(GridField.zeros(d), B).matrix, atol=1e-12)


def _pipeline_gap(fn, n):
    d = box(n)
    B = TraceBasis(d, 4)
    g = field(d, fn)
    a = relate_dtn(gamma_dtn(g, B), g).matrix
    b = assemble_dtn(gamma_to_q(g), B).matrix
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.slow
@pytest.mark.parametrize("fn", [lambda a, b, c: np.exp(a), lambda a, b, c: 1 + BUMP(a, b, c)],
                         ids=["exp", "interior-bump"])
def test_two_routes_agree(fn):
    e16, e32 = _pipeline_gap(fn, 16), _pipeline_gap(fn, 32)
    assert e32 <= 1e-3
    assert e16 / e32 >= 2 ** 1.5


def test_relate_rejects_combined_dtn():
    d = box(8)
    B = TraceBasis(d, 2)
    g = field(d, lambda a, b, c: 1 + 0 * a)
    L = gamma_dtn(g, B)
    with pytest.raises(LatticeError):
        relate_dtn(L - L, g)


def test_agreement_refuses_boundary_difference():
    d = box(16)
    g1 = field(d, lambda a, b, c: 1 + 0 * a)
    g2 = field(d, lambda a, b, c: 1 + 0.1 * smooth_bump((0.5, 0.5, -0.2), 0.4)(a, b, c))
    assert not boundary_agreement(g1, g2).ok
    with pytest.raises(BoundaryAgreementError):
        ConductivityPair(g1, g2)
    # differences on the inaccessible face alone are fine
    g3 = field(d, lambda a, b, c: 1 + 0.1 * smooth_bump((0.5, 0.5, 0.0), 0.3)(a, b, c))
    assert boundary_agreement(g1, g3).ok


def test_interior_perturbation_transfers_with_unit_ratio():
    d = box(16)
    B = TraceBasis(d, 3)
    g1 = field(d, lambda a, b, c: 1 + BUMP(a, b, c))
    pair = ConductivityPair(g1, g1.with_values(g1.values + 0.05 * field(d, PERTURB).values))
    assert pair.agreement.value_residual <= AGREEMENT_TOL
    ng, nq, ratio = norm_transfer_check(pair, B)
    assert ng > 0 and ratio == pytest.approx(1.0, abs=1e-8)


def test_perturbation_family_fit():
    d = box(16)
    B = TraceBasis(d, 3)
    g1 = field(d, lambda a, b, c: 1 + BUMP(a, b, c))
    rep = perturbation_family(g1, field(d, PERTURB), [1e-1, 1e-2, 1e-3, 1e-4], B)
    assert rep.C == pytest.approx(1.0, abs=1e-8)
    assert rep.qg_sigma == pytest.approx(1.0, abs=0.05)
    assert np.all(rep.gamma_diff <= rep.qg_C * rep.q_diff ** rep.qg_sigma * (1 + 1e-12))
    assert len(rep.rows()) == 4
