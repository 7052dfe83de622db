"""Feature fields over 6-D point sets and the exact group actions on them.

A field attaches, to every point z = z1 (+) z2 of a 6-D point set, feature
blocks indexed by a degree pair (p, q).  A degree-(p, q) block with c
channels is stored as an array of shape (n_points, c, (2p+1)(2q+1)); the
flat component axis is ordered with the first-factor (p) component major,
so the C-order reshape to (2p+1, 2q+1) is the matrix whose rows rotate with
r1 and whose columns rotate with r2.  Equivalently, the column-major unvec
of the flat vector is the matrix acted on as  A -> r2 A r1^T,  which is the
form the SE(3) projection consumes.  This vec convention is fixed globally.

Missing degrees are absent, not zero: the degree set of a field is explicit.
Fields are immutable values; every action returns a new field.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .so3 import wigner_d

BiDegree = tuple[int, int]

_ORTHO_TOL = 1e-9


def bidegree_dim(d: BiDegree) -> int:
    return (2 * d[0] + 1) * (2 * d[1] + 1)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RigidTransform:
    """A rotation-plus-translation element of SE(3)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthogonal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation has determinant != +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self o other (other acts first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        """Standard 4x4 homogeneous embedding."""
        h = np.eye(4)
        h[:3, :3] = self.rotation
        h[:3, 3] = self.translation
        return h

    @staticmethod
    def from_matrix(h: np.ndarray) -> "RigidTransform":
        h = np.asarray(h, dtype=float)
        if h.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {h.shape}")
        if np.abs(h[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-12:
            raise ValueError("last row of a homogeneous rigid matrix must be (0,0,0,1)")
        return RigidTransform(h[:3, :3], h[:3, 3])


@dataclass(frozen=True)
class BiRigid:
    """An independent pair of rigid motions acting on the two factors."""

    g1: RigidTransform
    g2: RigidTransform

    @staticmethod
    def identity() -> "BiRigid":
        return BiRigid(RigidTransform.identity(), RigidTransform.identity())

    def compose(self, other: "BiRigid") -> "BiRigid":
        return BiRigid(self.g1.compose(other.g1), self.g2.compose(other.g2))

    def swapped(self) -> "BiRigid":
        return BiRigid(self.g2, self.g1)


def homogeneous_matrix(g: RigidTransform) -> np.ndarray:
    return g.matrix()


def compose(g2: RigidTransform, g1: RigidTransform) -> RigidTransform:
    """Composite g2 o g1 (g1 acts first)."""
    return g2.compose(g1)


def invert(g: RigidTransform) -> RigidTransform:
    return g.inverse()


def homogeneous_gap(g: RigidTransform, h: RigidTransform) -> float:
    """Frobenius distance between 4x4 homogeneous embeddings."""
    return float(np.linalg.norm(g.matrix() - h.matrix()))


@dataclass(frozen=True)
class PointCloud:
    """Raw 3-D points with optional named per-point feature channels."""

    points: np.ndarray
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be (N, 3) with N >= 1, got {pts.shape}")
        feats = {}
        for name, block in self.features.items():
            block = np.asarray(block, dtype=float)
            if block.ndim != 2 or block.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"feature {name!r} must have {pts.shape[0]} rows, got {block.shape}"
                )
            feats[name] = _readonly(block)
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, g: RigidTransform) -> "PointCloud":
        """Move the cloud rigidly; 3-column feature channels rotate as vectors."""
        feats = {}
        for name, block in self.features.items():
            if block.shape[1] == 3:
                feats[name] = block @ g.rotation.T
            else:
                feats[name] = block
        return PointCloud(g.apply(self.points), feats)

    def scaled(self, c: float) -> "PointCloud":
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return PointCloud(self.points * c, dict(self.features))


@dataclass(frozen=True)
class TensorField:
    """Points in R^6 with a closed set of degree-(p, q) feature blocks."""

    points: np.ndarray
    blocks: dict[BiDegree, np.ndarray]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 6 or pts.shape[0] < 1:
            raise ValueError(f"points must be (L, 6) with L >= 1, got {pts.shape}")
        blocks = {}
        for deg, data in self.blocks.items():
            p, q = deg
            data = np.asarray(data, dtype=float)
            want = bidegree_dim(deg)
            if data.ndim != 3 or data.shape[0] != pts.shape[0] or data.shape[2] != want:
                raise ValueError(
                    f"degree {deg} block must be (L, c, {want}), got {data.shape}"
                )
            blocks[(int(p), int(q))] = _readonly(data)
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "blocks", blocks)

    @property
    def degrees(self) -> tuple[BiDegree, ...]:
        return tuple(sorted(self.blocks))

    def channels(self, degree: BiDegree) -> int:
        return self.blocks[degree].shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def matrix_view(flat: np.ndarray, degree: BiDegree) -> np.ndarray:
    """Column-major unvec of flat degree-(p, q) components.

    Output shape (..., 2q+1, 2p+1); under act_bi_rigid the result maps as
    A -> r2 A r1^T.  For degree (1, 1) this is the 3x3 feature the SE(3)
    projection feeds to the SVD step.
    """
    p, q = degree
    flat = np.asarray(flat, dtype=float)
    m = flat.reshape(flat.shape[:-1] + (2 * p + 1, 2 * q + 1))
    return np.swapaxes(m, -1, -2)


def flat_view(matrix: np.ndarray, degree: BiDegree) -> np.ndarray:
    """Inverse of matrix_view."""
    p, q = degree
    matrix = np.asarray(matrix, dtype=float)
    m = np.swapaxes(matrix, -1, -2)
    return m.reshape(m.shape[:-2] + (bidegree_dim(degree),))


def act_bi_rigid(g12: BiRigid, f: TensorField) -> TensorField:
    """Action of an SE(3) pair: move the two point factors, rotate features."""
    pts = np.empty_like(f.points)
    pts[:, :3] = g12.g1.apply(f.points[:, :3])
    pts[:, 3:] = g12.g2.apply(f.points[:, 3:])
    blocks = {}
    for (p, q), data in f.blocks.items():
        rho = np.kron(wigner_d(p, g12.g1.rotation), wigner_d(q, g12.g2.rotation))
        blocks[(p, q)] = data @ rho.T
    return TensorField(pts, blocks)


def act_swap(f: TensorField) -> TensorField:
    """Exchange the two factors: z1 (+) z2 -> z2 (+) z1.

    The degree-(p, q) output block is the per-channel matrix transpose of
    the input degree-(q, p) block; a swap-closed degree set is preserved.
    """
    pts = np.concatenate([f.points[:, 3:], f.points[:, :3]], axis=1)
    blocks = {}
    for (q, p), data in f.blocks.items():
        L, c, _ = data.shape
        swapped = data.reshape(L, c, 2 * q + 1, 2 * p + 1).swapaxes(2, 3)
        blocks[(p, q)] = swapped.reshape(L, c, -1)
    return TensorField(pts, blocks)


def act_scale(c: float, p: int, f: TensorField) -> TensorField:
    """Dilation action on a field of scaling degree p: points by c, values by c^p."""
    if c <= 0:
        raise ValueError("scale factor must be positive")
    factor = c ** p
    return TensorField(f.points * c, {d: b * factor for d, b in f.blocks.items()})
