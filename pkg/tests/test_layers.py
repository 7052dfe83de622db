import numpy as np
import pytest

from biequiv.fields import (
    BiRigid,
    RigidTransform,
    TensorField,
    act_bi_rigid,
    act_scale,
    act_swap,
    bidegree_dim,
)
from biequiv.layers import (
    EluParams,
    attention_weights,
    elu_layer,
    embed_cloud_3d,
    init_elu,
    init_layer,
    knn_graph,
    se3_layer,
    transformer_layer,
)
from conftest import random_rigid_pair, random_rotation

RNG = np.random.default_rng(31)

DEGREES4 = {(0, 0): 3, (0, 1): 2, (1, 0): 2, (1, 1): 2}


def random_field(rng, n_points=12, degrees=DEGREES4):
    blocks = {d: rng.normal(size=(n_points, c, bidegree_dim(d))) for d, c in degrees.items()}
    return TensorField(rng.normal(size=(n_points, 6)), blocks)


# --- neighbor graphs ---------------------------------------------------------


def test_knn_two_points():
    g = knn_graph(np.array([[0.0] * 6, [1.0] + [0.0] * 5]), 1)
    np.testing.assert_array_equal(g.indices, [[1], [0]])


def test_knn_matches_brute_force_on_collinear_points():
    # equally spaced points on a line; neighbors by plain distance sort
    pts = np.zeros((5, 6))
    pts[:, 0] = np.arange(5.0)
    g = knn_graph(pts, 2)
    expected = {
        0: [1, 2], 1: [0, 2], 2: [1, 3], 3: [2, 4], 4: [3, 2],
    }
    for u, nbrs in expected.items():
        assert sorted(g.indices[u].tolist()) == sorted(nbrs)


def test_knn_ties_break_by_ascending_index():
    pts = np.zeros((4, 6))
    pts[1, 0], pts[2, 0], pts[3, 0] = 1.0, -1.0, 2.0
    g = knn_graph(pts, 2)
    # points 1 and 2 are equidistant from 0; the smaller index comes first
    np.testing.assert_array_equal(g.indices[0], [1, 2])


def test_knn_full_graph():
    pts = RNG.normal(size=(6, 6))
    g = knn_graph(pts, 5)
    for u in range(6):
        assert sorted(g.indices[u].tolist()) == sorted(set(range(6)) - {u})


def test_knn_rejects_bad_k():
    pts = RNG.normal(size=(4, 6))
    with pytest.raises(ValueError):
        knn_graph(pts, 4)
    with pytest.raises(ValueError):
        knn_graph(pts, 0)


# --- attention ---------------------------------------------------------------


def test_single_neighbor_gets_full_attention():
    f = random_field(RNG, n_points=2)
    params = init_layer(DEGREES4, DEGREES4, RNG)
    graph = knn_graph(f.points, 1)
    alpha = attention_weights(params, f, graph)
    np.testing.assert_allclose(alpha, np.ones((2, 1)))


def test_equidistant_identical_neighbors_split_attention():
    # two neighbors with identical features at mirrored offsets on the scalar
    # degree produce identical keys, hence weight one half each
    pts = np.zeros((3, 6))
    pts[1, 0], pts[2, 0] = 1.0, -1.0
    degrees = {(0, 0): 2}
    blocks = {(0, 0): np.ones((3, 2, 1))}
    f = TensorField(pts, blocks)
    params = init_layer(degrees, degrees, RNG)
    alpha = attention_weights(params, f, knn_graph(pts, 2))
    np.testing.assert_allclose(alpha[0], [0.5, 0.5], atol=1e-15)


def test_attention_is_invariant_under_rigid_pairs():
    f = random_field(RNG)
    params = init_layer(DEGREES4, DEGREES4, RNG)
    graph = knn_graph(f.points, 5)
    alpha = attention_weights(params, f, graph)
    for _ in range(5):
        g12 = random_rigid_pair(RNG)
        alpha_g = attention_weights(params, act_bi_rigid(g12, f), graph)
        assert np.abs(alpha - alpha_g).max() < 1e-10
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-14)


# --- transformer layer -------------------------------------------------------


def test_zero_features_and_zero_self_interaction_give_zero_output():
    pts = RNG.normal(size=(6, 6))
    blocks = {d: np.zeros((6, c, bidegree_dim(d))) for d, c in DEGREES4.items()}
    f = TensorField(pts, blocks)
    params = init_layer(DEGREES4, DEGREES4, RNG, value_homogeneity=1, self_interaction=False)
    out = transformer_layer(params, f, knn_graph(pts, 3))
    for d in out.blocks:
        np.testing.assert_array_equal(out.blocks[d], 0.0)


def test_layer_is_bi_equivariant():
    f = random_field(RNG)
    params = init_layer(DEGREES4, DEGREES4, RNG)
    graph = knn_graph(f.points, 5)
    out = transformer_layer(params, f, graph)
    for _ in range(5):
        g12 = random_rigid_pair(RNG)
        lhs = transformer_layer(params, act_bi_rigid(g12, f), graph)
        rhs = act_bi_rigid(g12, out)
        for d in out.blocks:
            assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-10


def test_layer_is_swap_equivariant_with_tied_weights():
    f = random_field(RNG)
    params = init_layer(DEGREES4, DEGREES4, RNG, swap_tied=True)
    graph = knn_graph(f.points, 5)
    lhs = transformer_layer(params, act_swap(f), graph)
    rhs = act_swap(transformer_layer(params, f, graph))
    for d in lhs.blocks:
        assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-12


def test_untied_layer_visibly_breaks_swap_equivariance():
    f = random_field(RNG)
    params = init_layer(DEGREES4, DEGREES4, RNG, swap_tied=False)
    graph = knn_graph(f.points, 5)
    lhs = transformer_layer(params, act_swap(f), graph)
    rhs = act_swap(transformer_layer(params, f, graph))
    worst = max(np.abs(lhs.blocks[d] - rhs.blocks[d]).max() for d in lhs.blocks)
    assert worst > 1e-3


def test_layer_permutation_equivariance():
    f = random_field(RNG, n_points=10)
    params = init_layer(DEGREES4, DEGREES4, RNG)
    out = transformer_layer(params, f, knn_graph(f.points, 4))
    perm = RNG.permutation(10)
    fp = TensorField(f.points[perm], {d: b[perm] for d, b in f.blocks.items()})
    out_p = transformer_layer(params, fp, knn_graph(fp.points, 4))
    for d in out.blocks:
        np.testing.assert_allclose(out_p.blocks[d], out.blocks[d][perm], atol=1e-12)


def test_scale_chain_degrees():
    # degree-0 value path keeps a scaling-degree-0 field; a degree-1 value
    # path with zero self-interaction emits a scaling-degree-1 field
    pts = RNG.normal(size=(10, 6))
    f = TensorField(pts, {(0, 0): RNG.normal(size=(10, 2, 1))})
    graph = knn_graph(pts, 4)
    in_deg = {(0, 0): 2}
    for dv, expected_degree, selfint in ((0, 0, True), (1, 1, False)):
        params = init_layer(in_deg, DEGREES4, RNG, value_homogeneity=dv, self_interaction=selfint)
        out = transformer_layer(params, f, graph)
        for c in (0.5, 2.0, 10.0):
            lhs = transformer_layer(params, act_scale(c, 0, f), graph)
            rhs = act_scale(c, expected_degree, out)
            for d in out.blocks:
                assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-9


def test_degree_one_value_path_requires_zero_self_interaction():
    with pytest.raises(ValueError):
        init_layer(DEGREES4, DEGREES4, RNG, value_homogeneity=1, self_interaction=True)


# --- equivariant rectifier ---------------------------------------------------


def test_elu_with_equal_mixers_returns_mu_image():
    f = random_field(RNG)
    params = init_elu({d: c for d, c in DEGREES4.items()}, RNG, nu_equals_mu=True)
    out = elu_layer(params, f)
    for d, block in f.blocks.items():
        np.testing.assert_allclose(
            out.blocks[d], np.einsum("bc,lca->lba", params.w_mu[d], block), atol=1e-14
        )


def test_elu_annihilates_antiparallel_features():
    block = RNG.normal(size=(4, 1, 9))
    f = TensorField(RNG.normal(size=(4, 6)), {(1, 1): block})
    params = EluParams({(1, 1): np.eye(1)}, {(1, 1): -np.eye(1)})
    out = elu_layer(params, f)
    np.testing.assert_allclose(out.blocks[(1, 1)], 0.0, atol=1e-14)


def test_elu_zero_nu_takes_nonnegative_branch():
    block = RNG.normal(size=(4, 1, 3))
    f = TensorField(RNG.normal(size=(4, 6)), {(1, 0): block})
    params = EluParams({(1, 0): np.eye(1)}, {(1, 0): np.zeros((1, 1))})
    out = elu_layer(params, f)
    np.testing.assert_array_equal(out.blocks[(1, 0)], block)


def test_elu_is_bi_equivariant():
    f = random_field(RNG)
    params = init_elu({d: c for d, c in DEGREES4.items()}, RNG)
    out = elu_layer(params, f)
    for _ in range(5):
        g12 = random_rigid_pair(RNG)
        lhs = elu_layer(params, act_bi_rigid(g12, f))
        rhs = act_bi_rigid(g12, out)
        for d in out.blocks:
            assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-12


def test_elu_is_swap_equivariant_with_tied_weights():
    f = random_field(RNG)
    params = init_elu({d: c for d, c in DEGREES4.items()}, RNG, swap_tied=True)
    lhs = elu_layer(params, act_swap(f))
    rhs = act_swap(elu_layer(params, f))
    for d in lhs.blocks:
        assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-13


# --- lifted 3-D layers -------------------------------------------------------


def test_se3_layer_matches_transformer_on_lifted_points():
    pts = RNG.normal(size=(10, 3))
    degrees = {(0, 0): 2, (1, 0): 2}
    f = embed_cloud_3d(pts, {0: RNG.normal(size=(10, 2, 1)), 1: RNG.normal(size=(10, 2, 3))})
    params = init_layer(degrees, degrees, RNG)
    graph = knn_graph(f.points, 4)
    lhs = se3_layer(params, f, graph)
    rhs = transformer_layer(params, f, graph)
    for d in lhs.blocks:
        assert np.abs(lhs.blocks[d] - rhs.blocks[d]).max() < 1e-12


def test_se3_layer_is_rotation_equivariant():
    pts = RNG.normal(size=(10, 3))
    degrees = {(0, 0): 2, (1, 0): 2}
    blocks = {0: RNG.normal(size=(10, 2, 1)), 1: RNG.normal(size=(10, 2, 3))}
    params = init_layer(degrees, degrees, RNG)
    f = embed_cloud_3d(pts, blocks)
    graph = knn_graph(f.points, 4)
    out = se3_layer(params, f, graph)
    for _ in range(5):
        r = random_rotation(RNG)
        t = RNG.normal(size=3)
        moved = embed_cloud_3d(
            pts @ r.T + t, {0: blocks[0], 1: blocks[1] @ r.T}
        )
        lhs = se3_layer(params, moved, graph)
        assert np.abs(lhs.blocks[(0, 0)] - out.blocks[(0, 0)]).max() < 1e-10
        assert np.abs(lhs.blocks[(1, 0)] - out.blocks[(1, 0)] @ r.T).max() < 1e-10


def test_scalar_only_se3_network_is_rotation_invariant():
    pts = RNG.normal(size=(8, 3))
    degrees = {(0, 0): 2}
    params = init_layer(degrees, degrees, RNG)
    f = embed_cloud_3d(pts, {0: RNG.normal(size=(8, 2, 1))})
    graph = knn_graph(f.points, 3)
    out = se3_layer(params, f, graph)
    r = random_rotation(RNG)
    moved = embed_cloud_3d(pts @ r.T, {0: f.blocks[(0, 0)]})
    out_r = se3_layer(params, moved, graph)
    np.testing.assert_allclose(out_r.blocks[(0, 0)], out.blocks[(0, 0)], atol=1e-12)


def test_se3_layer_rejects_mixed_degrees():
    f = random_field(RNG)
    params = init_layer(DEGREES4, DEGREES4, RNG)
    with pytest.raises(ValueError):
        se3_layer(params, f, knn_graph(f.points, 3))
