"""Synthetic data generation and point-cloud utilities.

Every generator here is a pure function of its seed; the seed drives a
NumPy PCG64 generator (``numpy.random.default_rng``), which is the single
documented random-number algorithm of the package, so identical seeds give
bitwise-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .fields import PointCloud, RigidTransform


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.intp)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise ValueError("face indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class PlaneCropSpec:
    """A cutting plane: keep this ratio of points on one side of the normal.

    When ``normal`` is None the cropping routine draws a uniformly random
    unit normal from its seed.
    """

    keep_ratio: float
    normal: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.keep_ratio <= 1:
            raise ValueError("keep ratio must lie in (0, 1]")
        if self.normal is not None:
            n = np.asarray(self.normal, dtype=float).reshape(3)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ValueError("plane normal must have unit length")
            object.__setattr__(self, "normal", n)


def icosphere(subdivisions: int = 2) -> TriangleMesh:
    """Unit sphere triangulation, a convenient built-in test shape."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    vlist = [tuple(v) for v in verts]
    index = {v: i for i, v in enumerate(vlist)}

    def midpoint(i, j):
        m = (np.array(vlist[i]) + np.array(vlist[j])) / 2.0
        m /= np.linalg.norm(m)
        key = tuple(m)
        if key not in index:
            index[key] = len(vlist)
            vlist.append(key)
        return index[key]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return TriangleMesh(np.array(vlist), np.array(faces))


def sample_mesh(mesh: TriangleMesh, n: int, seed: int | np.random.Generator = 0) -> PointCloud:
    """Uniform area-weighted surface sampling, deterministic under seed."""
    if n < 1:
        raise ValueError("need at least one sample")
    if mesh.faces.shape[0] == 0:
        raise ValueError("mesh has no faces")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(mesh.faces.shape[0], size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[pick]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts)


def _take(cloud: PointCloud, idx: np.ndarray) -> PointCloud:
    return PointCloud(cloud.points[idx], {k: v[idx] for k, v in cloud.features.items()})


def crop_by_plane(
    cloud: PointCloud, spec: PlaneCropSpec, seed: int | np.random.Generator = 0
) -> tuple[PointCloud, PointCloud | None]:
    """Split a cloud by a plane, keeping exactly round(ratio * N) points.

    The plane offset is the keep-ratio quantile of point projections onto
    the normal, so the kept count is exact; kept and discarded partition
    the input.  With ratio 1 the discarded part is empty and returned as
    None (clouds never hold zero points).
    """
    n = len(cloud)
    keep = int(np.rint(spec.keep_ratio * n))
    if keep < 1:
        raise ValueError(f"keep ratio {spec.keep_ratio} leaves no points of {n}")
    normal = spec.normal
    if normal is None:
        rng = np.random.default_rng(seed)
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
    proj = cloud.points @ normal
    order = np.argsort(proj, kind="stable")
    kept = _take(cloud, np.sort(order[:keep]))
    if keep == n:
        return kept, None
    return kept, _take(cloud, np.sort(order[keep:]))


def split_two(
    cloud: PointCloud, ratio: float, seed: int | np.random.Generator = 0
) -> tuple[PointCloud, PointCloud]:
    """Partition by a random plane into parts of sizes round(ratio*N) and the rest."""
    if not 0 < ratio < 1:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    a, b = crop_by_plane(cloud, PlaneCropSpec(keep_ratio=ratio), seed)
    if b is None:
        raise ValueError(f"ratio {ratio} rounds to the whole cloud of {len(cloud)} points")
    return a, b


def add_outliers(
    cloud: PointCloud,
    count: int,
    box_halfwidth: float = 1.0,
    seed: int | np.random.Generator = 0,
) -> PointCloud:
    """Append uniform points from [-h, h]^3; feature channels get zero rows."""
    if count < 0:
        raise ValueError("outlier count must be non-negative")
    if count == 0:
        return cloud
    rng = np.random.default_rng(seed)
    extra = rng.uniform(-box_halfwidth, box_halfwidth, size=(count, 3))
    feats = {
        k: np.concatenate([v, np.zeros((count, v.shape[1]))]) for k, v in cloud.features.items()
    }
    return PointCloud(np.concatenate([cloud.points, extra]), feats)


def voxel_grid_sample(cloud: PointCloud, cell: float) -> PointCloud:
    """One centroid per occupied cubic cell, ordered by cell index."""
    if cell <= 0:
        raise ValueError("cell size must be positive")
    keys = np.floor(cloud.points / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((counts.shape[0], 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]
    feats = {}
    for k, v in cloud.features.items():
        fsum = np.zeros((counts.shape[0], v.shape[1]))
        np.add.at(fsum, inverse, v)
        feats[k] = fsum / counts[:, None]
    return PointCloud(centroids, feats)


def estimate_normals(cloud: PointCloud, k: int = 16) -> PointCloud:
    """Attach unit normals from the smallest covariance eigenvector.

    The neighborhood of a point is itself plus its k nearest neighbors.
    Signs are fixed to point away from the cloud centroid (outward for
    roughly convex shapes); the sign convention is re-evaluated after any
    motion, so only the unsigned line is rigid-motion invariant.
    """
    pts = cloud.points
    n = pts.shape[0]
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if n <= k:
        raise ValueError(f"cloud has {n} points, need more than k={k}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    outward = pts - pts.mean(axis=0)
    sign = np.where(np.einsum("ni,ni->n", normals, outward) < 0, -1.0, 1.0)
    normals = normals * sign[:, None]
    feats = dict(cloud.features)
    feats["normals"] = normals
    return PointCloud(pts, feats)


def random_rigid(
    seed: int | np.random.Generator = 0,
    rotation_scope: float = 180.0,
    translation_scale: float = 1.0,
) -> RigidTransform:
    """Random rigid motion: uniform rotation, translation uniform in a ball.

    The rotation is drawn from the uniform (Haar) distribution via a
    normalized Gaussian quaternion; ``rotation_scope`` caps the rotation
    angle in degrees by rejection, so 180 means unrestricted.
    """
    if translation_scale < 0:
        raise ValueError("translation scale must be non-negative")
    if not 0 < rotation_scope <= 180.0:
        raise ValueError("rotation scope must lie in (0, 180] degrees")
    rng = np.random.default_rng(seed)
    while True:
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        angle = np.degrees(2.0 * np.arccos(np.clip(abs(w), -1.0, 1.0)))
        if angle <= rotation_scope:
            break
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    radius = translation_scale * rng.random() ** (1.0 / 3.0)
    return RigidTransform(r, radius * direction)
