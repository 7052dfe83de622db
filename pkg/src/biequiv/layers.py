"""Message-passing layers over 6-D tensor fields.

A transformer layer combines a per-point self-interaction with an
attention-weighted sum of kernel messages from the k nearest neighbors:

    out_o(z_u) = W_o F_o(z_u)
               + sum_{i, v in N(u)} alpha_uv  W_V^{o,i}(z_v - z_u) f_i(z_v)

Attention logits are plain inner products of an equivariant query (a channel
reduction of each input degree block) with an equivariant key (a one-channel
kernel message per degree); the softmax is stabilized by max subtraction.
Both sides transform identically under rotation pairs, so the weights are
invariant and the layer inherits the kernels' equivariance.

The equivariant rectifier keeps, per point / degree / channel, the mu-image
of the block when it points along the nu-image, and otherwise removes its
projection onto the nu direction; a vanishing nu falls back to the
nonnegative branch.

All layers are pure functions of (params, field, graph); parameters are
immutable after construction and neighbor graphs are built once per point
set (the support never moves between layers).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .fields import BiDegree, TensorField, bidegree_dim
from .kernels import (
    KernelSpec,
    angular_basis_batch,
    coupling_slots,
    factor_norms,
    random_radial,
    spec_radial_batch,
)

PairKey = tuple[BiDegree, BiDegree]


@dataclass(frozen=True)
class NeighborGraph:
    """For each point, the indices of its k nearest neighbors (self excluded)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.ndim != 2:
            raise ValueError("neighbor indices must be (L, k)")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]


def knn_graph(points: np.ndarray, k: int) -> NeighborGraph:
    """Euclidean k-nearest-neighbor indices with self excluded.

    Ties are broken by ascending point index, so the graph is a
    deterministic function of the point order.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    sq = np.sum(pts ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return NeighborGraph(order[:, :k])


@dataclass(frozen=True)
class LayerParams:
    """Weights of one transformer layer.

    ``self_interaction[o]`` is a (c_out, c_in) matrix or None for a zero
    self-interaction (required when the value path is scale-homogeneous of
    degree one).  ``query[o]`` is a (1, c_in) channel reduction per input
    degree.  Key kernels emit one channel so keys concatenate like queries.
    """

    degrees_in: tuple[BiDegree, ...]
    degrees_out: tuple[BiDegree, ...]
    c_in: dict[BiDegree, int]
    c_out: dict[BiDegree, int]
    self_interaction: dict[BiDegree, np.ndarray | None]
    query: dict[BiDegree, np.ndarray]
    key_specs: dict[PairKey, KernelSpec]
    value_specs: dict[PairKey, KernelSpec]

    def validate_input(self, f: TensorField) -> None:
        if tuple(sorted(f.blocks)) != tuple(sorted(self.degrees_in)):
            raise ValueError(
                f"field degrees {tuple(sorted(f.blocks))} do not match layer input"
                f" degrees {tuple(sorted(self.degrees_in))}"
            )
        for d in self.degrees_in:
            if f.channels(d) != self.c_in[d]:
                raise ValueError(
                    f"degree {d} has {f.channels(d)} channels, layer expects {self.c_in[d]}"
                )


@dataclass(frozen=True)
class EluParams:
    """Per-degree channel mixers of the equivariant rectifier."""

    w_mu: dict[BiDegree, np.ndarray]
    w_nu: dict[BiDegree, np.ndarray]


def _canonical_pairs(degrees: list[BiDegree]) -> dict[BiDegree, BiDegree]:
    # maps each degree to the canonical member of its swap orbit
    return {d: min(d, (d[1], d[0])) for d in degrees}


def init_layer(
    degrees_in: dict[BiDegree, int],
    degrees_out: dict[BiDegree, int],
    rng: np.random.Generator,
    value_homogeneity: int = 0,
    self_interaction: bool = True,
    swap_tied: bool = False,
    hidden: int = 16,
) -> LayerParams:
    """Random transformer-layer weights; uniform [-a, a], a = 1/sqrt(fan-in).

    With ``swap_tied`` the self-interaction, query and radial weights of
    index-swapped degree pairs share storage (with argument/slot swaps
    resolved at evaluation time), which makes the layer commute with the
    factor swap.  Degree sets and channel counts must then be swap-closed.
    """
    d_in = sorted(degrees_in)
    d_out = sorted(degrees_out)
    if swap_tied:
        for dset, cs in ((d_in, degrees_in), (d_out, degrees_out)):
            for (p, q) in dset:
                if (q, p) not in cs or cs[(q, p)] != cs[(p, q)]:
                    raise ValueError("swap tying needs swap-closed degrees and channels")
    if value_homogeneity == 1 and self_interaction:
        raise ValueError("a degree-1 value path requires zero self-interaction")

    selfint: dict[BiDegree, np.ndarray | None] = {}
    query: dict[BiDegree, np.ndarray] = {}
    for o in d_out:
        if not self_interaction or o not in degrees_in:
            selfint[o] = None
            continue
        canon = min(o, (o[1], o[0])) if swap_tied else o
        if canon in selfint and selfint[canon] is not None:
            selfint[o] = selfint[canon]
        else:
            c_i, c_o = degrees_in[o], degrees_out[o]
            selfint[o] = rng.uniform(-1, 1, size=(c_o, c_i)) / np.sqrt(c_i)
    for o in d_in:
        canon = min(o, (o[1], o[0])) if swap_tied else o
        if canon in query:
            query[o] = query[canon]
        else:
            query[o] = rng.uniform(-1, 1, size=(1, degrees_in[o])) / np.sqrt(degrees_in[o])

    def build_specs(outs: dict[BiDegree, int], homogeneity: int) -> dict[PairKey, KernelSpec]:
        specs: dict[PairKey, KernelSpec] = {}
        for o in sorted(outs):
            for i in d_in:
                pair = (o, i)
                partner = ((o[1], o[0]), (i[1], i[0]))
                c_o, c_i = outs[o], degrees_in[i]
                n_out = len(coupling_slots(o, i)) * c_o * c_i
                if not swap_tied:
                    specs[pair] = KernelSpec(o, i, c_o, c_i, random_radial(n_out, homogeneity, rng, hidden))
                elif pair == partner:
                    specs[pair] = KernelSpec(o, i, c_o, c_i, random_radial(n_out, homogeneity, rng, hidden), tie="self")
                elif partner in specs:
                    specs[pair] = KernelSpec(o, i, c_o, c_i, specs[partner].radial, tie="partner")
                else:
                    specs[pair] = KernelSpec(o, i, c_o, c_i, random_radial(n_out, homogeneity, rng, hidden))
        return specs

    key_specs = build_specs({o: 1 for o in d_in}, homogeneity=0)
    value_specs = build_specs(degrees_out, homogeneity=value_homogeneity)
    return LayerParams(
        degrees_in=tuple(d_in),
        degrees_out=tuple(d_out),
        c_in=dict(degrees_in),
        c_out=dict(degrees_out),
        self_interaction=selfint,
        query=query,
        key_specs=key_specs,
        value_specs=value_specs,
    )


def init_elu(
    degrees: dict[BiDegree, int],
    rng: np.random.Generator,
    swap_tied: bool = False,
    nu_equals_mu: bool = False,
) -> EluParams:
    """Random rectifier weights.

    With ``nu_equals_mu`` the two channel mixers start identical, so the
    nonnegative branch is always taken at initialization.  Fresh models use
    this: layers whose input has a single scalar channel emit higher-degree
    blocks that are rank one across channels, and independent mixers then
    annihilate them outright on a sizable fraction of seeds (the negative
    branch subtracts the full parallel projection).
    """
    w_mu: dict[BiDegree, np.ndarray] = {}
    w_nu: dict[BiDegree, np.ndarray] = {}
    for d in sorted(degrees):
        canon = min(d, (d[1], d[0])) if swap_tied else d
        if canon in w_mu:
            w_mu[d], w_nu[d] = w_mu[canon], w_nu[canon]
        else:
            c = degrees[d]
            w_mu[d] = rng.uniform(-1, 1, size=(c, c)) / np.sqrt(c)
            w_nu[d] = w_mu[d] if nu_equals_mu else rng.uniform(-1, 1, size=(c, c)) / np.sqrt(c)
    return EluParams(w_mu, w_nu)


def _edge_geometry(f: TensorField, graph: NeighborGraph):
    if len(graph) != len(f):
        raise ValueError("graph was built for a different number of points")
    idx = graph.indices
    dz = f.points[idx] - f.points[:, None, :]  # z_v - z_u, shape (L, k, 6)
    return idx, dz, factor_norms(dz)


class _EdgeKernels:
    """Shared per-edge angular bases across the key and value paths."""

    def __init__(self, dz: np.ndarray, norms: np.ndarray):
        self.dz = dz
        self.norms = norms
        self._basis: dict[PairKey, np.ndarray] = {}

    def basis(self, o: BiDegree, i: BiDegree) -> np.ndarray:
        if (o, i) not in self._basis:
            self._basis[(o, i)] = angular_basis_batch(o, i, self.dz)
        return self._basis[(o, i)]

    def messages(self, spec: KernelSpec, feats: np.ndarray) -> np.ndarray:
        basis = self.basis(spec.o, spec.i)
        phi = spec_radial_batch(spec, self.norms)
        return np.einsum("lksab,lksoc,lkcb->lkoa", basis, phi, feats)


def _attention(params: LayerParams, f: TensorField, edges: _EdgeKernels, idx: np.ndarray) -> np.ndarray:
    logits = np.zeros(idx.shape)
    for o in params.degrees_in:
        q = np.einsum("c,lcd->ld", params.query[o][0], f.blocks[o])
        key = np.zeros(idx.shape + (bidegree_dim(o),))
        for i in params.degrees_in:
            key += edges.messages(params.key_specs[(o, i)], f.blocks[i][idx])[:, :, 0, :]
        logits += np.einsum("ld,lkd->lk", q, key)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=1, keepdims=True)


def attention_weights(params: LayerParams, f: TensorField, graph: NeighborGraph) -> np.ndarray:
    """Per-edge attention weights, shape (L, k); rows sum to one."""
    params.validate_input(f)
    idx, dz, norms = _edge_geometry(f, graph)
    return _attention(params, f, _EdgeKernels(dz, norms), idx)


def transformer_layer(params: LayerParams, f: TensorField, graph: NeighborGraph) -> TensorField:
    """One attention + self-interaction message-passing step."""
    params.validate_input(f)
    idx, dz, norms = _edge_geometry(f, graph)
    edges = _EdgeKernels(dz, norms)
    alpha = _attention(params, f, edges, idx)
    out: dict[BiDegree, np.ndarray] = {}
    for o in params.degrees_out:
        acc = np.zeros((len(f), params.c_out[o], bidegree_dim(o)))
        for i in params.degrees_in:
            msg = edges.messages(params.value_specs[(o, i)], f.blocks[i][idx])
            acc += np.einsum("lk,lkoa->loa", alpha, msg)
        w = params.self_interaction.get(o)
        if w is not None:
            acc += np.einsum("bc,lca->lba", w, f.blocks[o])
        out[o] = acc
    return TensorField(f.points, out)


def elu_layer(params: EluParams, f: TensorField) -> TensorField:
    """Equivariant rectifier, applied per point, degree and channel."""
    out: dict[BiDegree, np.ndarray] = {}
    for d, block in f.blocks.items():
        if d not in params.w_mu:
            raise ValueError(f"no rectifier weights for degree {d}")
        f_mu = np.einsum("bc,lca->lba", params.w_mu[d], block)
        f_nu = np.einsum("bc,lca->lba", params.w_nu[d], block)
        dots = np.sum(f_mu * f_nu, axis=-1, keepdims=True)
        nu_sq = np.sum(f_nu * f_nu, axis=-1, keepdims=True)
        coef = np.divide(dots, nu_sq, out=np.zeros_like(dots), where=nu_sq > 0)
        keep = (dots >= 0) | (nu_sq == 0)
        out[d] = np.where(keep, f_mu, f_mu - coef * f_nu)
    return TensorField(f.points, out)


def embed_cloud_3d(points: np.ndarray, blocks: dict[int, np.ndarray]) -> TensorField:
    """Lift a 3-D point set with degree-p features into the first factor.

    The second factor is pinned at the origin, so degree-(p, 0) fields and
    layers reproduce ordinary SE(3)-equivariant message passing.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    lifted = np.concatenate([pts, np.zeros_like(pts)], axis=1)
    return TensorField(lifted, {(p, 0): b for p, b in blocks.items()})


def se3_layer(params: LayerParams, f: TensorField, graph: NeighborGraph) -> TensorField:
    """Transformer layer restricted to degree-(p, 0) fields over lifted points."""
    for d in tuple(params.degrees_in) + tuple(params.degrees_out):
        if d[1] != 0:
            raise ValueError(f"degree {d} is not of the form (p, 0)")
    spread = np.ptp(f.points[:, 3:], axis=0).max() if len(f) > 1 else 0.0
    if spread > 0:
        raise ValueError("second point factor must be constant for the 3-D case")
    return transformer_layer(params, f, graph)
