"""Closed-form rigid alignment, SVD projection to SO(3), and ICP refinement.

The projection maps a 3x3 matrix A = U S V^T to U V^T after forcing both
factors into SO(3) (equivalently, flipping the sign of the last singular
pair when det(U V^T) < 0).  It is unique only when the smallest singular
value is strictly separated from the middle one; inputs violating that gap
raise ``DegenerateSpectrum``.  Note that orthogonal inputs always have a
fully degenerate spectrum, so they are rejected by the default tolerance
even though the projected value would be well defined; pass ``rel_gap=0``
to skip the check.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .fields import PointCloud, RigidTransform


class DegenerateSpectrum(ValueError):
    """The singular-value gap required for a unique projection is absent."""


class UnderDeterminedProblem(ValueError):
    """Too few points to pin down a rigid transform."""


def svd_project(a: np.ndarray, rel_gap: float = 1e-9) -> np.ndarray:
    """Nearest-rotation projection U V^T with determinant correction.

    Raises ``DegenerateSpectrum`` unless sigma_2 - sigma_3 >= rel_gap * sigma_1
    (and unless sigma_1 > 0).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(a)
    if s[0] <= 0:
        raise DegenerateSpectrum("zero matrix has no unique projection")
    if s[1] - s[2] < rel_gap * s[0]:
        raise DegenerateSpectrum(
            f"singular values {s} too close: gap {s[1] - s[2]:.3e}"
            f" below {rel_gap:.1e} * {s[0]:.3e}"
        )
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def singular_values(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)


def _as_points(x) -> np.ndarray:
    pts = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    return pts


def arun_solve(x, y, rel_gap: float = 1e-9) -> RigidTransform:
    """Least-squares rigid transform g with g(x_i) ~= y_i over known pairs.

    The rotation is the SVD projection of the cross-correlation of the
    centered pairs sum_i (y_i - m(y)) (x_i - m(x))^T; the translation then
    matches the means.
    """
    xp, yp = _as_points(x), _as_points(y)
    if xp.shape[0] != yp.shape[0]:
        raise ValueError(f"point counts differ: {xp.shape[0]} vs {yp.shape[0]}")
    if xp.shape[0] < 3:
        raise UnderDeterminedProblem("alignment needs at least 3 point pairs")
    mx, my = xp.mean(axis=0), yp.mean(axis=0)
    corr = (yp - my).T @ (xp - mx)
    r = svd_project(corr, rel_gap=rel_gap)
    return RigidTransform(r, my - r @ mx)


def rotation_error_deg(r: np.ndarray, r_gt: np.ndarray) -> float:
    cos = 0.5 * (np.trace(np.asarray(r) @ np.asarray(r_gt).T) - 1.0)
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def metrics(g: RigidTransform, g_gt: RigidTransform) -> tuple[float, float]:
    """Isotropic rotation error in degrees and Euclidean translation error."""
    dr = rotation_error_deg(g.rotation, g_gt.rotation)
    dt = float(np.linalg.norm(g_gt.translation - g.translation))
    return dr, dt


def loss(g: RigidTransform, g_gt: RigidTransform) -> float:
    """Evaluation loss |r^T r_gt - I|_F^2 + |t_gt - t|_2^2 (no gradients)."""
    rot = np.linalg.norm(g.rotation.T @ g_gt.rotation - np.eye(3)) ** 2
    tra = np.linalg.norm(g_gt.translation - g.translation) ** 2
    return float(rot + tra)


def correspondence_mse(x: np.ndarray, tree: cKDTree, g: RigidTransform) -> float:
    d, _ = tree.query(g.apply(x))
    return float(np.mean(d ** 2))


def icp_refine(
    x,
    y,
    g0: RigidTransform | None = None,
    max_iter: int = 50,
    tol: float = 1e-10,
    history: list[float] | None = None,
) -> RigidTransform:
    """Iterative closest point from an initial guess.

    Alternates nearest-neighbor matching of the transformed source against
    the reference with a closed-form re-alignment, and returns the iterate
    with the best mean-squared correspondence distance; the result is never
    worse than the initial guess.  A degenerate closed-form step or an
    improvement below ``tol`` stops the iteration.  When ``history`` is
    given, the per-iterate MSE values (initial one first) are appended.
    """
    xp, yp = _as_points(x), _as_points(y)
    if g0 is None:
        g0 = RigidTransform.identity()
    tree = cKDTree(yp)
    best_g = g0
    best_mse = correspondence_mse(xp, tree, g0)
    if history is not None:
        history.append(best_mse)
    g = g0
    prev = best_mse
    for _ in range(max_iter):
        _, idx = tree.query(g.apply(xp))
        try:
            g = arun_solve(xp, yp[idx])
        except (DegenerateSpectrum, UnderDeterminedProblem):
            break
        mse = correspondence_mse(xp, tree, g)
        if history is not None:
            history.append(mse)
        if mse < best_mse:
            best_mse, best_g = mse, g
        if prev - mse < tol:
            break
        prev = mse
    return best_g
