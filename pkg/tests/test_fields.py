import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biequiv.fields import (
    BiRigid,
    PointCloud,
    RigidTransform,
    TensorField,
    act_bi_rigid,
    act_scale,
    act_swap,
    bidegree_dim,
    compose,
    flat_view,
    homogeneous_gap,
    homogeneous_matrix,
    invert,
    matrix_view,
)
from conftest import random_rigid_pair, random_rotation

RNG = np.random.default_rng(77)


def random_field(rng, n_points=6, degrees=((0, 0), (0, 1), (1, 0), (1, 1)), channels=2):
    blocks = {d: rng.normal(size=(n_points, channels, bidegree_dim(d))) for d in degrees}
    return TensorField(rng.normal(size=(n_points, 6)), blocks)


def test_rigid_transform_validates_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.1, np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, -1.0, 1.0]), np.zeros(3))


def test_homogeneous_identity():
    np.testing.assert_array_equal(homogeneous_matrix(RigidTransform.identity()), np.eye(4))


def test_inverse_formula():
    g = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    inv = invert(g)
    np.testing.assert_allclose(inv.rotation, g.rotation.T, atol=1e-15)
    np.testing.assert_allclose(inv.translation, -g.rotation.T @ g.translation, atol=1e-15)
    assert homogeneous_gap(compose(inv, g), RigidTransform.identity()) < 1e-12


def test_compose_matches_matrix_product():
    g1 = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    g2 = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    np.testing.assert_allclose(
        compose(g2, g1).matrix(), g2.matrix() @ g1.matrix(), atol=1e-14
    )


def test_homogeneous_gap_of_equal_transforms_is_zero():
    g = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    assert homogeneous_gap(g, g) == 0.0


def test_from_matrix_round_trip():
    g = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    back = RigidTransform.from_matrix(g.matrix())
    assert homogeneous_gap(g, back) == 0.0


def test_identity_action_is_identity():
    f = random_field(RNG)
    out = act_bi_rigid(BiRigid.identity(), f)
    np.testing.assert_allclose(out.points, f.points, atol=1e-15)
    for d in f.blocks:
        np.testing.assert_allclose(out.blocks[d], f.blocks[d], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_vec_convention_matches_two_sided_rotation(seed):
    # (rho_1(r1) kron rho_1(r2)) vec(A) == vec(r2 A r1^T) under column-major vec
    rng = np.random.default_rng(seed)
    a = rng.normal(size=9)
    g12 = random_rigid_pair(rng)
    f = TensorField(rng.normal(size=(1, 6)), {(1, 1): a.reshape(1, 1, 9)})
    out = act_bi_rigid(g12, f)
    lhs = matrix_view(out.blocks[(1, 1)][0, 0], (1, 1))
    rhs = g12.g2.rotation @ matrix_view(a, (1, 1)) @ g12.g1.rotation.T
    assert np.abs(lhs - rhs).max() < 1e-13


def test_matrix_and_flat_views_are_inverse():
    for degree in ((1, 1), (1, 0), (0, 1), (2, 1)):
        v = RNG.normal(size=(4, bidegree_dim(degree)))
        np.testing.assert_array_equal(flat_view(matrix_view(v, degree), degree), v)


def test_scalar_block_values_unchanged_under_rigid_action():
    f = random_field(RNG)
    g12 = random_rigid_pair(RNG)
    out = act_bi_rigid(g12, f)
    np.testing.assert_array_equal(out.blocks[(0, 0)], f.blocks[(0, 0)])


def test_swap_is_an_involution():
    f = random_field(RNG)
    back = act_swap(act_swap(f))
    np.testing.assert_array_equal(back.points, f.points)
    for d in f.blocks:
        np.testing.assert_array_equal(back.blocks[d], f.blocks[d])


def test_swap_moves_degree_10_values_to_degree_01():
    f = random_field(RNG)
    s = act_swap(f)
    np.testing.assert_array_equal(s.blocks[(0, 1)], f.blocks[(1, 0)])
    np.testing.assert_array_equal(s.blocks[(1, 0)], f.blocks[(0, 1)])


def test_swap_transposes_degree_11_matrices():
    f = random_field(RNG)
    s = act_swap(f)
    m = matrix_view(f.blocks[(1, 1)], (1, 1))
    ms = matrix_view(s.blocks[(1, 1)], (1, 1))
    np.testing.assert_array_equal(ms, np.swapaxes(m, -1, -2))


def test_swap_and_rigid_actions_are_compatible():
    f = random_field(RNG)
    g12 = random_rigid_pair(RNG)
    lhs = act_swap(act_bi_rigid(g12, f))
    rhs = act_bi_rigid(g12.swapped(), act_swap(f))
    np.testing.assert_allclose(lhs.points, rhs.points, atol=1e-12)
    for d in lhs.blocks:
        np.testing.assert_allclose(lhs.blocks[d], rhs.blocks[d], atol=1e-12)


def test_rigid_action_composes():
    f = random_field(RNG)
    g12 = random_rigid_pair(RNG)
    h12 = random_rigid_pair(RNG)
    lhs = act_bi_rigid(g12.compose(h12), f)
    rhs = act_bi_rigid(g12, act_bi_rigid(h12, f))
    np.testing.assert_allclose(lhs.points, rhs.points, atol=1e-10)
    for d in lhs.blocks:
        np.testing.assert_allclose(lhs.blocks[d], rhs.blocks[d], atol=1e-10)


def test_unit_scale_is_identity():
    f = random_field(RNG)
    out = act_scale(1.0, 1, f)
    np.testing.assert_array_equal(out.points, f.points)
    for d in f.blocks:
        np.testing.assert_array_equal(out.blocks[d], f.blocks[d])


def test_degree_zero_scaling_moves_points_only():
    f = random_field(RNG)
    out = act_scale(2.0, 0, f)
    np.testing.assert_array_equal(out.points, 2.0 * f.points)
    for d in f.blocks:
        np.testing.assert_array_equal(out.blocks[d], f.blocks[d])


def test_degree_one_scaling_scales_values():
    f = random_field(RNG)
    out = act_scale(2.0, 1, f)
    np.testing.assert_array_equal(out.points, 2.0 * f.points)
    for d in f.blocks:
        np.testing.assert_array_equal(out.blocks[d], 2.0 * f.blocks[d])


def test_scale_rejects_nonpositive_factor():
    f = random_field(RNG)
    with pytest.raises(ValueError):
        act_scale(0.0, 1, f)


def test_scale_commutes_with_pure_rotations():
    f = random_field(RNG)
    g12 = BiRigid(
        RigidTransform(random_rotation(RNG), np.zeros(3)),
        RigidTransform(random_rotation(RNG), np.zeros(3)),
    )
    lhs = act_scale(3.0, 1, act_bi_rigid(g12, f))
    rhs = act_bi_rigid(g12, act_scale(3.0, 1, f))
    np.testing.assert_allclose(lhs.points, rhs.points, atol=1e-12)
    for d in lhs.blocks:
        np.testing.assert_allclose(lhs.blocks[d], rhs.blocks[d], atol=1e-12)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), {"normals": np.zeros((3, 3))})


def test_cloud_transform_rotates_vector_channels():
    cloud = PointCloud(RNG.normal(size=(5, 3)), {"normals": RNG.normal(size=(5, 3))})
    g = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    moved = cloud.transformed(g)
    np.testing.assert_allclose(moved.points, g.apply(cloud.points), atol=1e-15)
    np.testing.assert_allclose(
        moved.features["normals"], cloud.features["normals"] @ g.rotation.T, atol=1e-15
    )


def test_tensor_field_validates_block_shapes():
    with pytest.raises(ValueError):
        TensorField(np.zeros((3, 6)), {(1, 1): np.zeros((3, 1, 8))})
    with pytest.raises(ValueError):
        TensorField(np.zeros((3, 6)), {(1, 1): np.zeros((2, 1, 9))})
