"""Equivariant convolution kernels on R^6 = R^3 x R^3.

A kernel for input degree pair i = (i1, i2) and output degree pair
o = (o1, o2) is a sum over coupling degrees (J1, J2) of a learnable radial
coefficient times a fixed angular basis matrix:

    W(z) = sum_{J1, J2} phi_{J1,J2}(|z1|, |z2|) * B_{J1,J2}(z1/|z1|, z2/|z2|)

where B is assembled from second-order coupling blocks and spherical
harmonics of the two direction factors.  Constructed this way, W satisfies
the steerability constraint  W(r12 z) = rho_o(r12) W(z) rho_i(r12)^T  for
every rotation pair, which ``certify_kernel_constraint`` checks numerically.

Radial networks are exactly scale-homogeneous: a degree-1 network is two
bias-free linear stages with rectifiers; a degree-0 network additionally
applies shift-free, epsilon-free layer normalization after each rectifier
(a pre-normalization vector that is identically zero maps to zero).  When
a direction factor has (near-)zero norm its J > 0 harmonics are zeroed and
the J = 0 constant is kept; the origin is a rotation fixed point, so this
preserves equivariance.

Swap weight-tying: a spec may share its radial network with the spec of the
index-swapped degree pair.  The tied evaluation reads the shared network at
swapped arguments and swapped (J1, J2) slots; a self-paired spec symmetrizes
instead, which covers the J1 = J2 case where sharing alone is not enough.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .fields import BiDegree, bidegree_dim
from .so3 import bi_cg_block, harmonics_batch, wigner_d

_ZERO_NORM = 1e-12


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _layer_norm(x: np.ndarray) -> np.ndarray:
    # shift-free, epsilon-free; identically-zero rows stay zero
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    std = np.sqrt((centered ** 2).mean(axis=-1, keepdims=True))
    return np.divide(centered, std, out=np.zeros_like(x), where=std > 0)


@dataclass(frozen=True)
class RadialNet:
    """Two-stage bias-free radial network of exact scale homogeneity 0 or 1."""

    homogeneity: int
    w1: np.ndarray  # (hidden, 2)
    w2: np.ndarray  # (n_out, hidden)

    def __post_init__(self):
        if self.homogeneity not in (0, 1):
            raise ValueError("homogeneity degree must be 0 or 1")
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=float))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=float))
        if self.w1.shape[1] != 2:
            raise ValueError("radial input dimension is 2 (the two factor norms)")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("stage widths do not chain")

    @property
    def n_out(self) -> int:
        return self.w2.shape[0]

    def evaluate(self, norms: np.ndarray) -> np.ndarray:
        """Map norms of shape (..., 2) to raw outputs of shape (..., n_out)."""
        x = np.asarray(norms, dtype=float)
        h = _relu(x @ self.w1.T)
        if self.homogeneity == 0:
            h = _layer_norm(h)
        y = _relu(h @ self.w2.T)
        if self.homogeneity == 0:
            y = _layer_norm(y)
        return y


def random_radial(
    n_out: int, homogeneity: int, rng: np.random.Generator, hidden: int = 16
) -> RadialNet:
    """Fresh radial network, uniform [-a, a] weights with a = 1/sqrt(fan-in)."""
    w1 = rng.uniform(-1, 1, size=(hidden, 2)) / np.sqrt(2)
    w2 = rng.uniform(-1, 1, size=(n_out, hidden)) / np.sqrt(hidden)
    return RadialNet(homogeneity, w1, w2)


def radial_eval(net: RadialNet, n1: float, n2: float) -> np.ndarray:
    """Evaluate a radial network at a pair of non-negative norms."""
    if n1 < 0 or n2 < 0:
        raise ValueError("factor norms must be non-negative")
    return net.evaluate(np.array([n1, n2]))


def coupling_slots(o: BiDegree, i: BiDegree) -> list[tuple[int, int]]:
    """Admissible (J1, J2) pairs for a degree-(o, i) kernel, in canonical order."""
    return [
        (J1, J2)
        for J1 in range(abs(o[0] - i[0]), o[0] + i[0] + 1)
        for J2 in range(abs(o[1] - i[1]), o[1] + i[1] + 1)
    ]


def _swap_slot_permutation(o: BiDegree, i: BiDegree) -> np.ndarray:
    # index k of this spec's slot (J1, J2) -> index of (J2, J1) in the
    # partner spec's canonical slot order
    partner = coupling_slots((o[1], o[0]), (i[1], i[0]))
    return np.array([partner.index((J2, J1)) for (J1, J2) in coupling_slots(o, i)])


@dataclass(frozen=True)
class KernelSpec:
    """One (output degree, input degree) kernel with its radial network.

    ``tie`` selects how the radial coefficients are read:
      * "none"    -- phi(x, y) = psi(x, y)
      * "partner" -- psi belongs to the index-swapped spec;
                     phi_{J1,J2}(x, y) = psi_{J2,J1}(y, x)
      * "self"    -- phi_{J1,J2}(x, y) = (psi_{J1,J2}(x, y) + psi_{J2,J1}(y, x)) / 2
    """

    o: BiDegree
    i: BiDegree
    c_out: int
    c_in: int
    radial: RadialNet
    tie: str = "none"

    def __post_init__(self):
        if self.tie not in ("none", "partner", "self"):
            raise ValueError(f"unknown tie mode {self.tie!r}")
        n_slots = len(coupling_slots(self.o, self.i))
        want = n_slots * self.c_out * self.c_in
        if self.radial.n_out != want:
            raise ValueError(
                f"radial network emits {self.radial.n_out} values, kernel needs {want}"
            )

    @property
    def slots(self) -> list[tuple[int, int]]:
        return coupling_slots(self.o, self.i)

    @property
    def dims(self) -> tuple[int, int]:
        return bidegree_dim(self.o), bidegree_dim(self.i)


def spec_radial_batch(spec: KernelSpec, norms: np.ndarray) -> np.ndarray:
    """Radial coefficients with tie resolution, shape (..., n_slots, c_out, c_in)."""
    norms = np.asarray(norms, dtype=float)
    n_slots = len(spec.slots)
    shape = norms.shape[:-1] + (n_slots, spec.c_out, spec.c_in)
    if spec.tie == "none":
        return spec.radial.evaluate(norms).reshape(shape)
    perm = _swap_slot_permutation(spec.o, spec.i)
    swapped = spec.radial.evaluate(norms[..., ::-1]).reshape(shape)[..., perm, :, :]
    if spec.tie == "partner":
        return swapped
    direct = spec.radial.evaluate(norms).reshape(shape)
    return 0.5 * (direct + swapped)


def factor_norms(z: np.ndarray) -> np.ndarray:
    """Norms of the two 3-D factors, shape (..., 2).

    Norms below the zero threshold are flushed to exactly zero so that the
    radial networks see the stable coincident-point limit instead of a
    noise-dominated norm ratio (a degree-0 network only depends on that
    ratio, which is meaningless at rounding scale).
    """
    z = np.asarray(z, dtype=float)
    n1 = np.linalg.norm(z[..., :3], axis=-1)
    n2 = np.linalg.norm(z[..., 3:], axis=-1)
    n = np.stack([n1, n2], axis=-1)
    n[n <= _ZERO_NORM] = 0.0
    return n


def _directions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # returns flushed norms (..., 2) and safe unit directions for both factors
    z = np.asarray(z, dtype=float)
    norms = factor_norms(z)
    z1, z2 = z[..., :3], z[..., 3:]
    n1, n2 = norms[..., :1], norms[..., 1:]
    u1 = np.divide(z1, n1, out=np.zeros_like(z1), where=n1 > 0)
    u2 = np.divide(z2, n2, out=np.zeros_like(z2), where=n2 > 0)
    return norms, u1, u2


def _factor_harmonics(J: int, u: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # J > 0 harmonics of a zero-norm factor vanish; J = 0 keeps its constant
    y = harmonics_batch(J, u)
    if J > 0:
        y = np.where(norm[..., None] > 0, y, 0.0)
    return y


def angular_basis_batch(o: BiDegree, i: BiDegree, z: np.ndarray) -> np.ndarray:
    """Fixed angular kernel basis, shape (..., n_slots, d_o, d_i)."""
    norms, u1, u2 = _directions(z)
    d_o, d_i = bidegree_dim(o), bidegree_dim(i)
    out = []
    for J1, J2 in coupling_slots(o, i):
        y1 = _factor_harmonics(J1, u1, norms[..., 0])
        y2 = _factor_harmonics(J2, u2, norms[..., 1])
        y = np.einsum("...m,...n->...mn", y1, y2).reshape(y1.shape[:-1] + (-1,))
        vec = y @ bi_cg_block(o, i, J1, J2).T
        mat = vec.reshape(vec.shape[:-1] + (d_i, d_o))
        out.append(np.swapaxes(mat, -1, -2))
    return np.stack(out, axis=-3)


def kernel_eval_batch(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    """Kernels at points z of shape (..., 6); output (..., c_out, c_in, d_o, d_i)."""
    norms, _, _ = _directions(z)
    basis = angular_basis_batch(spec.o, spec.i, z)
    phi = spec_radial_batch(spec, norms)
    return np.einsum("...sab,...soc->...ocab", basis, phi)


def kernel_eval(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    """Kernel at a single 6-vector, shape (c_out, c_in, d_o, d_i)."""
    z = np.asarray(z, dtype=float).reshape(6)
    return kernel_eval_batch(spec, z)


def apply_kernel_batch(spec: KernelSpec, z: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Apply kernels at offsets z (..., 6) to features (..., c_in, d_i).

    Contracts radial coefficients, angular basis and features in one pass;
    output shape (..., c_out, d_o).
    """
    norms, _, _ = _directions(z)
    basis = angular_basis_batch(spec.o, spec.i, z)
    phi = spec_radial_batch(spec, norms)
    return np.einsum("...sab,...soc,...cb->...oa", basis, phi, feats)


@dataclass(frozen=True)
class KernelCertificate:
    """Result of a numerical steerability check."""

    max_residual: float
    max_kernel_norm: float
    trials: int

    def passed(self, tol: float) -> bool:
        return self.max_residual < tol


def certify_kernel_constraint(
    spec: KernelSpec, trials: int = 100, seed: int | np.random.Generator = 0
) -> KernelCertificate:
    """Measure the worst steerability residual over random inputs.

    Draws random offsets z and random rotation pairs (r1, r2) and compares
    W(r12 z) against rho_o(r12) W(z) rho_i(r12)^T in Frobenius norm.  The
    reported ``max_kernel_norm`` certifies the check is not vacuous.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    worst = 0.0
    biggest = 0.0
    for _ in range(trials):
        z = rng.normal(size=6)
        r1 = Rotation.random(random_state=rng).as_matrix()
        r2 = Rotation.random(random_state=rng).as_matrix()
        rho_o = np.kron(wigner_d(spec.o[0], r1), wigner_d(spec.o[1], r2))
        rho_i = np.kron(wigner_d(spec.i[0], r1), wigner_d(spec.i[1], r2))
        zr = np.concatenate([r1 @ z[:3], r2 @ z[3:]])
        w = kernel_eval(spec, z)
        w_rot = kernel_eval(spec, zr)
        pushed = np.einsum("ab,ocbd,ed->ocae", rho_o, w, rho_i)
        worst = max(worst, float(np.linalg.norm(w_rot - pushed)))
        biggest = max(biggest, float(np.linalg.norm(w)))
    return KernelCertificate(worst, biggest, trials)
