"""End-to-end bi-equivariant assembly of two point clouds.

The pipeline has three stages:

1.  A shared 3-D feature extractor scores every input point and produces a
    fixed number of key points per cloud as convex combinations of the raw
    points (row-softmax weights); the degree-0 scores of each cloud are
    fused with the average-pooled scores of the partner cloud before the
    extractor's final layer, so key-point selection sees both shapes.
2.  The two ordered key-point lists are concatenated pointwise into a 6-D
    point set carrying a constant scalar field, which a stack of
    pair-equivariant transformer layers turns into one degree-(1,1), one
    degree-(1,0) and one degree-(0,1) feature.
3.  The pooled features are projected to SE(3): the rotation is the SVD
    projection of the pooled 3x3 feature, and the translation matches the
    key-point means corrected by the two learned offsets.

With swap-tied weights the whole map inverts under argument exchange, which
yields exact recovery on the complete-matching problem even with random,
untrained weights.  With the scale-homogeneity chain (all radial networks
degree 0 except a degree-1 value path with zero self-interaction in the
last pair layer) the rotation is scale-invariant and the translation scales
linearly.  ``equivariance_audit`` measures all three properties numerically.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import (
    BiDegree,
    PointCloud,
    RigidTransform,
    TensorField,
    bidegree_dim,
    matrix_view,
)
from .geometry import random_rigid
from .kernels import KernelSpec, RadialNet
from .layers import (
    EluParams,
    LayerParams,
    NeighborGraph,
    elu_layer,
    embed_cloud_3d,
    init_elu,
    init_layer,
    knn_graph,
    se3_layer,
    transformer_layer,
)
from .registration import singular_values, svd_project

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the default architecture; all configurable."""

    keypoints: int = 32
    neighbors: int = 24
    channels: int = 4
    extractor_layers: int = 2
    pair_layers: int = 2
    max_degree: int = 1
    swap_tied: bool = True
    scale_chain: bool = True
    use_normals: bool = False
    hidden: int = 16

    def __post_init__(self):
        if self.keypoints < 2 or self.neighbors < 1 or self.channels < 1:
            raise ValueError("keypoints, neighbors and channels must be positive")
        if self.extractor_layers < 2 or self.pair_layers < 2:
            raise ValueError("both stages need at least two layers (fusion/projection)")
        if not 1 <= self.max_degree <= 2:
            raise ValueError("per-factor feature degrees above 2 are unsupported")


@dataclass(frozen=True)
class ExtractorParams:
    layers: tuple[LayerParams, ...]
    elus: tuple[EluParams, ...]


@dataclass(frozen=True)
class PairStackParams:
    layers: tuple[LayerParams, ...]
    elus: tuple[EluParams, ...]


@dataclass(frozen=True)
class AssemblyModel:
    config: ModelConfig
    extractor: ExtractorParams
    pair_stack: PairStackParams


@dataclass(frozen=True)
class KeypointResult:
    x_keys: np.ndarray
    y_keys: np.ndarray
    x_weights: np.ndarray
    y_weights: np.ndarray


@dataclass(frozen=True)
class Diagnostics:
    singular_values: np.ndarray
    gap_ratio: float
    near_degenerate: bool
    t_x: np.ndarray
    t_y: np.ndarray
    x_keys: np.ndarray
    y_keys: np.ndarray


@dataclass(frozen=True)
class AssemblyResult:
    transform: RigidTransform
    diagnostics: Diagnostics


def build_model(config: ModelConfig = ModelConfig(), seed: int | np.random.Generator = 0) -> AssemblyModel:
    """Randomly initialized model; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    c = config.channels

    # 3-D extractor on lifted degrees (p, 0)
    deg3 = [(p, 0) for p in range(config.max_degree + 1)]
    in0: dict[BiDegree, int] = {(0, 0): 1}
    if config.use_normals:
        in0[(1, 0)] = 1
    interior = {d: c for d in deg3}
    # a broken scale chain forces degree-1 radial value paths everywhere
    ext_dv = 0 if config.scale_chain else 1
    ext_layers: list[LayerParams] = []
    ext_elus: list[EluParams] = []
    current = in0
    for _ in range(config.extractor_layers - 1):
        ext_layers.append(
            init_layer(
                current, interior, rng,
                value_homogeneity=ext_dv,
                self_interaction=config.scale_chain,
                hidden=config.hidden,
            )
        )
        ext_elus.append(init_elu(interior, rng, nu_equals_mu=True))
        current = dict(interior)
    fused = dict(current)
    fused[(0, 0)] = current[(0, 0)] + c  # pooled partner scores are concatenated
    ext_layers.append(
        init_layer(
            fused, {(0, 0): config.keypoints}, rng,
            value_homogeneity=ext_dv,
            self_interaction=config.scale_chain,
            hidden=config.hidden,
        )
    )

    # pair stack on the merged 6-D points
    pair_all = [
        (p, q)
        for p in range(config.max_degree + 1)
        for q in range(config.max_degree + 1)
    ]
    final_out = {(1, 1): 1, (1, 0): 1, (0, 1): 1}
    interior_dv = 0 if config.scale_chain else 1
    pair_layers: list[LayerParams] = []
    pair_elus: list[EluParams] = []
    current = {(0, 0): 1}
    for _ in range(config.pair_layers - 1):
        pair_layers.append(
            init_layer(
                current,
                {d: c for d in pair_all},
                rng,
                value_homogeneity=interior_dv,
                self_interaction=config.scale_chain,
                swap_tied=config.swap_tied,
                hidden=config.hidden,
            )
        )
        pair_elus.append(
            init_elu({d: c for d in pair_all}, rng, swap_tied=config.swap_tied, nu_equals_mu=True)
        )
        current = {d: c for d in pair_all}
    pair_layers.append(
        init_layer(
            current,
            final_out,
            rng,
            value_homogeneity=1,
            self_interaction=False,
            swap_tied=config.swap_tied,
            hidden=config.hidden,
        )
    )
    return AssemblyModel(
        config,
        ExtractorParams(tuple(ext_layers), tuple(ext_elus)),
        PairStackParams(tuple(pair_layers), tuple(pair_elus)),
    )


def _initial_field_3d(cloud: PointCloud, use_normals: bool) -> TensorField:
    n = len(cloud)
    blocks: dict[int, np.ndarray] = {0: np.ones((n, 1, 1))}
    if use_normals:
        if "normals" not in cloud.features:
            raise ValueError("model expects a 'normals' feature channel on both clouds")
        blocks[1] = cloud.features["normals"][:, None, :]
    return embed_cloud_3d(cloud.points, blocks)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def _fuse(fx: TensorField, fy: TensorField) -> tuple[TensorField, TensorField]:
    # concatenate each cloud's scalar scores with the partner's pooled scores
    pooled_x = fx.blocks[(0, 0)].mean(axis=0)
    pooled_y = fy.blocks[(0, 0)].mean(axis=0)

    def widen(f: TensorField, partner_pool: np.ndarray) -> TensorField:
        blocks = dict(f.blocks)
        tiled = np.broadcast_to(partner_pool, (len(f),) + partner_pool.shape)
        blocks[(0, 0)] = np.concatenate([f.blocks[(0, 0)], tiled], axis=1)
        return TensorField(f.points, blocks)

    return widen(fx, pooled_y), widen(fy, pooled_x)


def extract_keypoints(model: AssemblyModel, x: PointCloud, y: PointCloud) -> KeypointResult:
    """Ordered key points of both clouds as convex combinations of raw points."""
    if len(x) < 2 or len(y) < 2:
        raise ValueError("each cloud needs at least two points")
    cfg = model.config
    fx = _initial_field_3d(x, cfg.use_normals)
    fy = _initial_field_3d(y, cfg.use_normals)
    gx = knn_graph(fx.points, min(cfg.neighbors, len(x) - 1))
    gy = knn_graph(fy.points, min(cfg.neighbors, len(y) - 1))
    for layer, elu in zip(model.extractor.layers[:-1], model.extractor.elus):
        fx = elu_layer(elu, se3_layer(layer, fx, gx))
        fy = elu_layer(elu, se3_layer(layer, fy, gy))
    fx, fy = _fuse(fx, fy)
    fx = se3_layer(model.extractor.layers[-1], fx, gx)
    fy = se3_layer(model.extractor.layers[-1], fy, gy)
    wx = _softmax_rows(fx.blocks[(0, 0)][:, :, 0].T)
    wy = _softmax_rows(fy.blocks[(0, 0)][:, :, 0].T)
    return KeypointResult(wx @ x.points, wy @ y.points, wx, wy)


def merge_pc(x_keys: np.ndarray, y_keys: np.ndarray) -> np.ndarray:
    """Pointwise concatenation into a 6-D point set."""
    xk = np.asarray(x_keys, dtype=float)
    yk = np.asarray(y_keys, dtype=float)
    if xk.shape != yk.shape or xk.ndim != 2 or xk.shape[1] != 3:
        raise ValueError(f"key point lists must both be (L, 3), got {xk.shape} and {yk.shape}")
    return np.concatenate([xk, yk], axis=1)


def se3_project(
    f: TensorField, x_keys: np.ndarray, y_keys: np.ndarray, rel_gap: float = 1e-9
) -> AssemblyResult:
    """Project pooled equivariant features to a rigid transform."""
    for d in ((1, 1), (1, 0), (0, 1)):
        if d not in f.blocks or f.channels(d) != 1:
            raise ValueError(f"projection needs a single degree-{d} channel")
    r_tilde = f.blocks[(1, 1)][:, 0, :].mean(axis=0)
    r_hat = matrix_view(r_tilde, (1, 1))
    t_x = f.blocks[(1, 0)][:, 0, :].mean(axis=0)
    t_y = f.blocks[(0, 1)][:, 0, :].mean(axis=0)
    svals = singular_values(r_hat)
    gap_ratio = float((svals[1] - svals[2]) / svals[0]) if svals[0] > 0 else 0.0
    rot = svd_project(r_hat, rel_gap=rel_gap)
    trans = (y_keys.mean(axis=0) + t_y) - rot @ (x_keys.mean(axis=0) + t_x)
    diag = Diagnostics(
        singular_values=svals,
        gap_ratio=gap_ratio,
        near_degenerate=bool(gap_ratio < 1e-6),
        t_x=t_x,
        t_y=t_y,
        x_keys=np.asarray(x_keys, dtype=float),
        y_keys=np.asarray(y_keys, dtype=float),
    )
    return AssemblyResult(RigidTransform(rot, trans), diag)


def pair_features(model: AssemblyModel, x: PointCloud, y: PointCloud) -> tuple[TensorField, KeypointResult]:
    """Run extraction, merge and the pair stack; return the final field."""
    keys = extract_keypoints(model, x, y)
    merged = merge_pc(keys.x_keys, keys.y_keys)
    cfg = model.config
    f = TensorField(merged, {(0, 0): np.ones((merged.shape[0], 1, 1))})
    graph = knn_graph(merged, min(cfg.neighbors, merged.shape[0] - 1))
    stack = model.pair_stack
    for layer, elu in zip(stack.layers[:-1], stack.elus):
        f = elu_layer(elu, transformer_layer(layer, f, graph))
    f = transformer_layer(stack.layers[-1], f, graph)
    return f, keys


def assemble(model: AssemblyModel, x: PointCloud, y: PointCloud, rel_gap: float = 1e-9) -> AssemblyResult:
    """Rigid transform aligning cloud x to cloud y; deterministic per weights."""
    f, keys = pair_features(model, x, y)
    return se3_project(f, keys.x_keys, keys.y_keys, rel_gap=rel_gap)


def complete_match(model: AssemblyModel, x: PointCloud, y: PointCloud) -> RigidTransform:
    """Composed assembly that exactly recovers g from (x, g x) pairs.

    Requires a swap-tied model: the self-match of x is then an involution,
    and composing with it cancels, leaving the relating transform.
    """
    if not model.config.swap_tied:
        raise ValueError("complete matching requires a swap-tied model")
    g_xy = assemble(model, x, y).transform
    g_xx = assemble(model, x, x).transform
    return g_xy.compose(g_xx)


@dataclass(frozen=True)
class AuditReport:
    """Worst-case equivariance residuals over random perturbations."""

    delta_bi: float
    delta_swap: float
    delta_scale: float
    trials: int

    def passed(self, tol: float) -> bool:
        return max(self.delta_bi, self.delta_swap, self.delta_scale) < tol

    def as_dict(self) -> dict:
        return {
            "delta_bi": self.delta_bi,
            "delta_swap": self.delta_swap,
            "delta_scale": self.delta_scale,
            "trials": self.trials,
        }


def equivariance_audit(
    model: AssemblyModel,
    x: PointCloud,
    y: PointCloud,
    trials: int = 20,
    seed: int | np.random.Generator = 0,
) -> AuditReport:
    """Measure the three equivariance residuals on random perturbations.

    Per trial: a random rigid pair (g1, g2) for the two-sided residual, the
    swapped perturbed pair for the swap residual, and a random positive
    scale for the scale residual.  All residuals are Frobenius norms on 4x4
    homogeneous matrices (the scale residual splits rotation and
    translation parts).
    """
    rng = np.random.default_rng(seed)
    base = assemble(model, x, y).transform
    d_bi = d_swap = d_scale = 0.0
    for _ in range(trials):
        g1 = random_rigid(rng, translation_scale=2.0)
        g2 = random_rigid(rng, translation_scale=2.0)
        xg, yg = x.transformed(g1), y.transformed(g2)
        out = assemble(model, xg, yg).transform
        expected = g2.compose(base).compose(g1.inverse())
        d_bi = max(d_bi, float(np.linalg.norm(out.matrix() - expected.matrix())))

        swapped = assemble(model, yg, xg).transform
        d_swap = max(d_swap, float(np.linalg.norm(swapped.matrix() - out.inverse().matrix())))

        c = float(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))
        out_c = assemble(model, x.scaled(c), y.scaled(c)).transform
        d_scale = max(
            d_scale,
            float(
                np.linalg.norm(out_c.rotation - base.rotation)
                + np.linalg.norm(out_c.translation - c * base.translation)
            ),
        )
    return AuditReport(d_bi, d_swap, d_scale, trials)


# ---------------------------------------------------------------------------
# JSON serialization: one document of named float arrays plus a config header


def _degree_key(d: BiDegree) -> str:
    return f"{d[0]},{d[1]}"


def _parse_degree(s: str) -> BiDegree:
    a, b = s.split(",")
    return (int(a), int(b))


def _radial_to_dict(net: RadialNet) -> dict:
    return {"homogeneity": net.homogeneity, "w1": net.w1.tolist(), "w2": net.w2.tolist()}


def _radial_from_dict(d: dict) -> RadialNet:
    return RadialNet(int(d["homogeneity"]), np.array(d["w1"]), np.array(d["w2"]))


def _spec_to_dict(spec: KernelSpec) -> dict:
    return {
        "o": list(spec.o),
        "i": list(spec.i),
        "c_out": spec.c_out,
        "c_in": spec.c_in,
        "tie": spec.tie,
        "radial": _radial_to_dict(spec.radial),
    }


def _spec_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(
        tuple(d["o"]), tuple(d["i"]), int(d["c_out"]), int(d["c_in"]),
        _radial_from_dict(d["radial"]), d["tie"],
    )


def _layer_to_dict(p: LayerParams) -> dict:
    return {
        "degrees_in": [list(d) for d in p.degrees_in],
        "degrees_out": [list(d) for d in p.degrees_out],
        "c_in": {_degree_key(d): c for d, c in p.c_in.items()},
        "c_out": {_degree_key(d): c for d, c in p.c_out.items()},
        "self_interaction": {
            _degree_key(d): (None if w is None else w.tolist())
            for d, w in p.self_interaction.items()
        },
        "query": {_degree_key(d): w.tolist() for d, w in p.query.items()},
        "key_specs": {
            f"{_degree_key(o)}|{_degree_key(i)}": _spec_to_dict(s)
            for (o, i), s in p.key_specs.items()
        },
        "value_specs": {
            f"{_degree_key(o)}|{_degree_key(i)}": _spec_to_dict(s)
            for (o, i), s in p.value_specs.items()
        },
    }


def _layer_from_dict(d: dict) -> LayerParams:
    def specs(items):
        out = {}
        for key, sd in items.items():
            o_s, i_s = key.split("|")
            out[(_parse_degree(o_s), _parse_degree(i_s))] = _spec_from_dict(sd)
        return out

    return LayerParams(
        degrees_in=tuple(tuple(x) for x in d["degrees_in"]),
        degrees_out=tuple(tuple(x) for x in d["degrees_out"]),
        c_in={_parse_degree(k): int(v) for k, v in d["c_in"].items()},
        c_out={_parse_degree(k): int(v) for k, v in d["c_out"].items()},
        self_interaction={
            _parse_degree(k): (None if w is None else np.array(w))
            for k, w in d["self_interaction"].items()
        },
        query={_parse_degree(k): np.array(w) for k, w in d["query"].items()},
        key_specs=specs(d["key_specs"]),
        value_specs=specs(d["value_specs"]),
    )


def _elu_to_dict(p: EluParams) -> dict:
    return {
        "w_mu": {_degree_key(d): w.tolist() for d, w in p.w_mu.items()},
        "w_nu": {_degree_key(d): w.tolist() for d, w in p.w_nu.items()},
    }


def _elu_from_dict(d: dict) -> EluParams:
    return EluParams(
        {_parse_degree(k): np.array(w) for k, w in d["w_mu"].items()},
        {_parse_degree(k): np.array(w) for k, w in d["w_nu"].items()},
    )


def model_to_dict(model: AssemblyModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": asdict(model.config),
        "extractor": {
            "layers": [_layer_to_dict(p) for p in model.extractor.layers],
            "elus": [_elu_to_dict(p) for p in model.extractor.elus],
        },
        "pair_stack": {
            "layers": [_layer_to_dict(p) for p in model.pair_stack.layers],
            "elus": [_elu_to_dict(p) for p in model.pair_stack.elus],
        },
    }


def model_from_dict(doc: dict) -> AssemblyModel:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')!r}")
    config = ModelConfig(**doc["config"])
    extractor = ExtractorParams(
        tuple(_layer_from_dict(d) for d in doc["extractor"]["layers"]),
        tuple(_elu_from_dict(d) for d in doc["extractor"]["elus"]),
    )
    pair = PairStackParams(
        tuple(_layer_from_dict(d) for d in doc["pair_stack"]["layers"]),
        tuple(_elu_from_dict(d) for d in doc["pair_stack"]["elus"]),
    )
    return AssemblyModel(config, extractor, pair)


def save_model(model: AssemblyModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> AssemblyModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
