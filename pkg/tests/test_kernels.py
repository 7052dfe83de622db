import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biequiv import kernels as K
from biequiv import so3
from biequiv.kernels import (
    KernelSpec,
    certify_kernel_constraint,
    coupling_slots,
    kernel_eval,
    radial_eval,
    random_radial,
    spec_radial_batch,
)
from conftest import random_rotation

RNG = np.random.default_rng(2024)

DEGREES = [(0, 0), (0, 1), (1, 0), (1, 1)]


def make_spec(o, i, c_out=1, c_in=1, homogeneity=0, tie="none", rng=RNG, net=None):
    n_out = len(coupling_slots(o, i)) * c_out * c_in
    if net is None:
        net = random_radial(n_out, homogeneity, rng)
    return KernelSpec(o, i, c_out, c_in, net, tie)


positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(a=positive, b=positive, c=positive)
def test_degree_one_radial_is_positively_homogeneous(a, b, c):
    net = random_radial(6, 1, np.random.default_rng(3))
    lhs = radial_eval(net, c * a, c * b)
    rhs = c * radial_eval(net, a, b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


@settings(max_examples=50, deadline=None)
@given(a=positive, b=positive, c=positive)
def test_degree_zero_radial_is_scale_invariant(a, b, c):
    net = random_radial(6, 0, np.random.default_rng(4))
    lhs = radial_eval(net, c * a, c * b)
    rhs = radial_eval(net, a, b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_radial_rejects_negative_norms():
    net = random_radial(2, 0, RNG)
    with pytest.raises(ValueError):
        radial_eval(net, -1.0, 0.5)


def test_self_tied_radial_is_symmetric_under_argument_swap():
    # the symmetric case averages the network over both argument orders
    o = i = (1, 1)
    spec = make_spec(o, i, tie="self")
    slots = spec.slots
    phi_ab = spec_radial_batch(spec, np.array([0.7, 1.9]))
    phi_ba = spec_radial_batch(spec, np.array([1.9, 0.7]))
    for k, (j1, j2) in enumerate(slots):
        partner = slots.index((j2, j1))
        assert abs(phi_ab[k, 0, 0] - phi_ba[partner, 0, 0]) < 1e-14


def test_scalar_kernel_closed_form():
    # the (0,0)->(0,0) kernel is the radial value times k0^2 with k0 = 1
    spec = make_spec((0, 0), (0, 0), homogeneity=1)
    z = RNG.normal(size=6)
    n1, n2 = np.linalg.norm(z[:3]), np.linalg.norm(z[3:])
    w = kernel_eval(spec, z)
    assert w.shape == (1, 1, 1, 1)
    expected = radial_eval(spec.radial, n1, n2)[0]
    np.testing.assert_allclose(w[0, 0, 0, 0], expected, rtol=1e-14)


@pytest.mark.parametrize("o", DEGREES)
@pytest.mark.parametrize("i", DEGREES)
def test_kernel_constraint_for_all_degree_pairs(o, i):
    for homogeneity in (0, 1):
        spec = make_spec(o, i, c_out=2, c_in=2, homogeneity=homogeneity)
        cert = certify_kernel_constraint(spec, trials=25, seed=RNG)
        assert cert.max_kernel_norm > 1e-8  # the check must not be vacuous
        assert cert.max_residual < 1e-10


def test_scalar_kernel_is_trivially_steerable():
    cert = certify_kernel_constraint(make_spec((0, 0), (0, 0)), trials=20, seed=1)
    assert cert.max_residual < 1e-14


def test_corrupted_coupling_block_breaks_the_constraint(monkeypatch):
    spec = make_spec((1, 1), (1, 0), homogeneity=1)
    clean = certify_kernel_constraint(spec, trials=20, seed=7)
    assert clean.max_residual < 1e-10

    true_block = K.bi_cg_block

    def corrupted(o, i, j1, j2):
        block = np.array(true_block(o, i, j1, j2))
        block[0, 0] += 0.05
        return block

    monkeypatch.setattr(K, "bi_cg_block", corrupted)
    broken = certify_kernel_constraint(spec, trials=20, seed=7)
    assert broken.max_residual > 1e-3


@pytest.mark.parametrize("homogeneity", [0, 1])
def test_kernel_scale_homogeneity(homogeneity):
    spec = make_spec((1, 1), (0, 1), c_out=2, c_in=3, homogeneity=homogeneity)
    z = RNG.normal(size=6)
    w = kernel_eval(spec, z)
    for c in (0.5, 2.0, 10.0):
        np.testing.assert_allclose(
            kernel_eval(spec, c * z), c ** homogeneity * w, rtol=1e-12, atol=1e-15
        )


def _pair_transpose(w, o, i):
    # transpose within both factor pairs of a (c_out, c_in, d_o, d_i) kernel
    do1, do2 = 2 * o[0] + 1, 2 * o[1] + 1
    di1, di2 = 2 * i[0] + 1, 2 * i[1] + 1
    t = w.reshape(w.shape[:2] + (do1, do2, di1, di2))
    return t.transpose(0, 1, 3, 2, 5, 4).reshape(w.shape)


def test_swap_tied_kernels_satisfy_the_transpose_identity():
    o, i = (1, 0), (1, 1)
    ot, it = (0, 1), (1, 1)
    net = random_radial(len(coupling_slots(o, i)) * 4, 0, RNG)
    spec = make_spec(o, i, c_out=2, c_in=2, net=net)
    partner = make_spec(ot, it, c_out=2, c_in=2, net=net, tie="partner")
    for _ in range(10):
        z = RNG.normal(size=6)
        sz = np.concatenate([z[3:], z[:3]])
        w = kernel_eval(spec, z)
        wp = kernel_eval(partner, sz)
        assert np.abs(w - _pair_transpose(wp, ot, it)).max() < 1e-12


def _classic_se3_kernel(l_out, l_in, phi, x):
    # independent single-factor steerable kernel: sum_J phi_J unvec(Q_J Y_J)
    n = np.linalg.norm(x)
    d_o, d_i = 2 * l_out + 1, 2 * l_in + 1
    w = np.zeros((d_o, d_i))
    for idx, J in enumerate(range(abs(l_out - l_in), l_out + l_in + 1)):
        vec = so3.cg_block(l_out, l_in, J) @ so3.real_harmonics(J, x / n)
        w += phi[idx] * vec.reshape(d_i, d_o).T
    return w


def test_degree_p0_kernels_reduce_to_single_factor_kernels():
    # embedding a 3-D problem in the first factor reproduces the classic kernel
    for l_out, l_in in [(0, 1), (1, 1), (1, 0)]:
        o, i = (l_out, 0), (l_in, 0)
        spec = make_spec(o, i, homogeneity=1)
        x = RNG.normal(size=3)
        z = np.concatenate([x, np.zeros(3)])
        phi = spec_radial_batch(spec, np.array([np.linalg.norm(x), 0.0]))[:, 0, 0]
        expected = _classic_se3_kernel(l_out, l_in, phi, x)
        np.testing.assert_allclose(kernel_eval(spec, z)[0, 0], expected, atol=1e-13)


def test_zero_norm_factor_keeps_only_its_constant_harmonic():
    spec = make_spec((0, 1), (0, 1), homogeneity=1)
    z = np.concatenate([np.zeros(3), RNG.normal(size=3)])
    w = kernel_eval(spec, z)  # J1 = 0 slot survives, J1 > 0 vanish with z1 = 0
    assert np.all(np.isfinite(w))
    cert_z = np.abs(w).max()
    assert cert_z > 0


def test_spec_validates_radial_width():
    net = random_radial(5, 0, RNG)
    with pytest.raises(ValueError):
        KernelSpec((1, 1), (1, 1), 1, 1, net)
