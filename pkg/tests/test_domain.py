import numpy as np
import pytest
from hypothesis import given, strategies as st

from calderon_lab.domain import (GAMMA0_FACE, BoundaryTrace, BoxDomain, GridField, build_box,
                                 doubled_domain, even_reflect, lower_half, read_gridfield,
                                 reflect_field, write_gridfield, zero_extend)
from calderon_lab.errors import LatticeError


def test_build_box_contract():
    dom = build_box((0, 0, -1), (1, 1, 0), 32)
    assert dom.shape == (33, 33, 33)
    part = dom.partition
    top = np.zeros(dom.shape, bool)
    top[:, :, -1] = True
    assert set(part.gamma0_nodes) == set(np.flatnonzero(top.ravel()))
    assert np.all(part.face_map[:, :, -1] == GAMMA0_FACE)


@pytest.mark.parametrize("upper, res", [((1, 1, 0.5), 16), ((1, 1, 0), 7)])
def test_build_box_rejects(upper, res):
    with pytest.raises(LatticeError):
        build_box((0, 0, -1), upper, res)


def test_unequal_spacing_rejected():
    with pytest.raises(LatticeError):
        build_box((0, 0, -1), (2, 1, 0), 16)


def test_partition_covers_boundary_once(box8):
    part = box8.partition
    both = np.concatenate([part.gamma0_nodes, part.gamma_nodes])
    assert len(both) == len(np.unique(both)) == part.n_boundary
    # boundary area sums to the surface of the box
    assert np.isclose(part.area.sum(), 6.0)


def test_zero_extend(box8):
    big = BoxDomain((0, 0, -2), (2, 2, 0), (16, 16, 16))
    one = GridField.from_function(box8, lambda a, b, c: np.ones_like(a))
    ext = zero_extend(one, big)
    assert ext.parity == "zero_extended"
    assert ext.values[:9, :9, 8:].min() == 1.0
    assert ext.values.sum() == 9 ** 3
    bump = GridField.from_function(box8, lambda a, b, c: np.exp(-((a - .5) ** 2 + (b - .5) ** 2 + (c + .5) ** 2) / .01))
    e2 = zero_extend(bump, big)
    mask = np.zeros(big.shape, bool)
    mask[:9, :9, 8:] = True
    assert np.all(e2.values[~mask] == 0.0)
    assert np.isclose(zero_extend(GridField.zeros(box8), big).norm_inf(), 0.0)


def test_zero_extend_lattice_mismatch(box8):
    off = BoxDomain((0.01, 0, -2), (2.01, 2, 0), (16, 16, 16))
    with pytest.raises(LatticeError):
        zero_extend(GridField.zeros(box8), off)


def test_zero_extend_preserves_norms(box8, rng):
    f = GridField(box8, rng.standard_normal(box8.shape))
    # interior-only support keeps trapezoid weights identical after extension
    vals = f.values.copy()
    vals[[0, -1]] = 0
    vals[:, [0, -1]] = 0
    vals[:, :, [0, -1]] = 0
    f = f.with_values(vals)
    big = BoxDomain((-1, -1, -2), (2, 2, 1), (24, 24, 24))
    e = zero_extend(f, big)
    assert np.isclose(e.norm_l1(), f.norm_l1(), rtol=1e-13)
    assert np.isclose(e.norm_l2(), f.norm_l2(), rtol=1e-13)


@pytest.mark.parametrize("fn, expected", [
    (lambda a, b, c: c ** 2, lambda a, b, c: c ** 2),
    (lambda a, b, c: np.ones_like(a), lambda a, b, c: np.ones_like(a)),
    (lambda a, b, c: c, lambda a, b, c: -np.abs(c)),
])
def test_even_reflect(box8, fn, expected):
    out = even_reflect(GridField.from_function(box8, fn))
    assert out.domain.upper[2] == 1.0 and out.is_even_in_x3()
    np.testing.assert_allclose(out.values, GridField.from_function(out.domain, expected).values, atol=1e-15)


def test_even_reflect_needs_flush_box():
    dom = BoxDomain((0, 0, -1), (1, 1, -0.5), (16, 16, 8))
    with pytest.raises(LatticeError):
        even_reflect(GridField.zeros(dom))


def test_reflect_field(box8):
    sym = doubled_domain(box8)
    h = GridField.from_function(sym, lambda a, b, c: c)
    np.testing.assert_array_equal(reflect_field(h).values, -h.values)
    e = GridField.from_function(sym, lambda a, b, c: np.exp(1j * c))
    np.testing.assert_allclose(reflect_field(e).values, np.exp(-1j * sym.mesh()[2]), atol=1e-15)
    ev = even_reflect(GridField.from_function(box8, lambda a, b, c: a * c))
    np.testing.assert_array_equal(reflect_field(ev).values, ev.values)
    with pytest.raises(LatticeError):
        reflect_field(GridField.zeros(box8))
    assert lower_half(sym) == box8


@given(st.integers(0, 2 ** 31 - 1))
def test_reflect_involution(seed):
    dom = BoxDomain((0, 0, -1), (1, 1, 1), (8, 8, 16))
    r = np.random.default_rng(seed)
    f = GridField(dom, r.standard_normal(dom.shape) + 1j * r.standard_normal(dom.shape))
    np.testing.assert_array_equal(reflect_field(reflect_field(f)).values, f.values)


@given(st.integers(0, 2 ** 31 - 1))
def test_even_reflect_always_even(seed):
    dom = build_box((0, 0, -1), (1, 1, 0), 8)
    f = GridField(dom, np.random.default_rng(seed).standard_normal(dom.shape))
    assert even_reflect(f).is_even_in_x3()


@pytest.mark.parametrize("cplx", [False, True])
def test_gridfield_roundtrip(tmp_path, box8, rng, cplx):
    vals = rng.standard_normal(box8.shape) + (1j * rng.standard_normal(box8.shape) if cplx else 0)
    f = GridField(box8, vals, "even_in_x3" if cplx else "none")
    write_gridfield(tmp_path / "f.cgf", f)
    raw = (tmp_path / "f.cgf").read_bytes()
    assert raw[:4] == b"CGF1" and len(raw) == 4 + 24 + 2 + vals.size * (16 if cplx else 8)
    g = read_gridfield(tmp_path / "f.cgf", box8)
    np.testing.assert_array_equal(g.values, f.values)
    assert g.parity == f.parity


def test_boundary_trace_support(box8):
    tr = BoundaryTrace.from_function(box8, lambda a, b, c: a + 1)
    assert tr.gamma0_leak() > 0
    assert tr.restricted_to_gamma().gamma0_leak() == 0.0
