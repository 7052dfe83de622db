"""Real irreducible representations of SO(3) and their coupling tables.

Everything downstream (steerable kernels, group actions on feature fields)
is built from three ingredients defined here:

* ``wigner_d(p, r)``      -- the degree-p irrep matrix of a rotation,
* ``real_harmonics(J, u)`` -- degree-J spherical harmonics on the unit sphere,
* ``cg_block(o, i, J)``   -- the real change-of-basis block coupling the
  tensor product of two irreps to a single irrep.

Conventions (fixed once, used consistently by all three tables):

* All representations are real orthogonal; components are ordered
  m = -J .. J.
* Degree 1 uses the Cartesian (x, y, z) basis, so ``wigner_d(1, r)`` is the
  rotation matrix itself and ``real_harmonics(1, u) == u``.
* Degrees >= 2 use the real basis obtained from the complex angular-momentum
  basis by the standard unitary change of basis with the Condon-Shortley
  phase (the variant that renders generators and coupling blocks real).
* Harmonics are normalized to unit Euclidean norm on the unit sphere;
  in particular ``real_harmonics(0, u) == [1.0]`` (the constant k0 is 1).
* Coupling blocks are computed numerically from the represented Lie algebra
  (Casimir eigenspaces plus a Schur intertwiner), never transcribed from
  closed-form tables, and are cached after the first computation.

The tables are immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

MAX_DEGREE = 4

_ROTATION_TOL = 1e-9

# degree -> (Lx, Ly, Lz); real antisymmetric, [Lx, Ly] = Lz and cyclic
_GENERATOR_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
# (o, i, J) -> coupling block
_CG_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
# J -> norm of the unnormalized recursive harmonic on the unit sphere
_HARMONIC_NORM_CACHE: dict[int, float] = {}


def _check_degree(p: int, name: str = "degree") -> int:
    if not isinstance(p, (int, np.integer)) or p < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {p!r}")
    if p > MAX_DEGREE:
        raise ValueError(f"{name} {p} above supported range (max {MAX_DEGREE})")
    return int(p)


def irrep_dim(p: int) -> int:
    """Dimension 2p+1 of the degree-p irrep."""
    return 2 * _check_degree(p) + 1


def _su2_raising(l: int) -> np.ndarray:
    # (J+)[m+1, m] = sqrt(l(l+1) - m(m+1)), rows/cols indexed m = -l..l
    d = 2 * l + 1
    jp = np.zeros((d, d))
    for m in range(-l, l):
        jp[m + 1 + l, m + l] = np.sqrt(l * (l + 1) - m * (m + 1))
    return jp


def _complex_to_real_basis(l: int) -> np.ndarray:
    # Columns express the real basis in the complex |l, m> basis; the
    # (-i)^l phase makes the conjugated generators (and hence all coupling
    # blocks) real-valued.
    d = 2 * l + 1
    q = np.zeros((d, d), dtype=np.complex128)
    for m in range(-l, 0):
        q[l + m, l + abs(m)] = 1 / np.sqrt(2)
        q[l + m, l - abs(m)] = -1j / np.sqrt(2)
    q[l, l] = 1.0
    for m in range(1, l + 1):
        q[l + m, l + abs(m)] = (-1) ** m / np.sqrt(2)
        q[l + m, l - abs(m)] = 1j * (-1) ** m / np.sqrt(2)
    return (-1j) ** l * q


def generators(p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Real antisymmetric generators (Lx, Ly, Lz) of the degree-p irrep."""
    p = _check_degree(p)
    if p in _GENERATOR_CACHE:
        return _GENERATOR_CACHE[p]
    if p == 0:
        zero = np.zeros((1, 1))
        gens = (zero, zero.copy(), zero.copy())
    elif p == 1:
        # Cartesian basis: expm of these is the rotation matrix itself
        lx = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        ly = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        lz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        gens = (lx, ly, lz)
    else:
        jp = _su2_raising(p)
        jm = jp.T
        jx = (jp + jm) / 2.0
        jy = (jp - jm) / 2j
        jz = np.diag(np.arange(-p, p + 1).astype(float))
        q = _complex_to_real_basis(p)
        out = []
        for jc in (jx, jy, jz):
            real_gen = q.conj().T @ (-1j * jc) @ q
            if np.abs(real_gen.imag).max() > 1e-12:
                raise AssertionError("complex-to-real change of basis failed")
            out.append(np.ascontiguousarray(real_gen.real))
        gens = (out[0], out[1], out[2])
    for g in gens:
        g.setflags(write=False)
    _GENERATOR_CACHE[p] = gens
    return gens


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > _ROTATION_TOL:
        raise ValueError("input is not orthogonal")
    if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
        raise ValueError("input has determinant != +1")
    return r


def wigner_d(p: int, r: np.ndarray) -> np.ndarray:
    """Degree-p irrep matrix of the rotation r, in the real basis.

    ``wigner_d(0, r)`` is ``[[1.0]]`` and ``wigner_d(1, r)`` is ``r``
    itself (Cartesian degree-1 basis).
    """
    p = _check_degree(p)
    r = _check_rotation(r)
    if p == 0:
        return np.array([[1.0]])
    if p == 1:
        return r.copy()
    vec = Rotation.from_matrix(r).as_rotvec()
    lx, ly, lz = generators(p)
    return expm(vec[0] * lx + vec[1] * ly + vec[2] * lz)


def _casimir_eigenspace(gens: list[np.ndarray], J: int) -> np.ndarray:
    # Orthonormal basis of the degree-J isotypic component; valid only when
    # the component has multiplicity one (always true for a product of two
    # SO(3) irreps).
    casimir = -sum(g @ g for g in gens)
    evals, evecs = np.linalg.eigh(casimir)
    target = J * (J + 1)
    mask = np.abs(evals - target) < 0.5
    basis = evecs[:, mask]
    if basis.shape[1] != 2 * J + 1:
        raise AssertionError(
            f"isotypic component of degree {J} has dimension {basis.shape[1]},"
            f" expected {2 * J + 1}"
        )
    return basis


def _schur_intertwiner(h_gens: list[np.ndarray], J: int) -> np.ndarray:
    # Unique-up-to-sign orthogonal S with H_a S = S L_a for all axes; its
    # existence and one-dimensionality follow from Schur's lemma for real
    # irreps of real type.
    ref = generators(J)
    n = 2 * J + 1
    eye = np.eye(n)
    rows = [np.kron(eye, h) - np.kron(a.T, eye) for h, a in zip(h_gens, ref)]
    mat = np.vstack(rows)
    _, svals, vt = np.linalg.svd(mat)
    if svals[-1] > 1e-8 or (len(svals) > 1 and svals[-2] < 1e-6):
        raise AssertionError("intertwiner space is not one-dimensional")
    s = vt[-1].reshape(n, n, order="F")
    scale = np.sqrt(np.trace(s.T @ s) / n)
    return s / scale


def cg_block(o: int, i: int, J: int) -> np.ndarray:
    """Real coupling block of shape ((2i+1)(2o+1), 2J+1).

    Rows are indexed with the degree-i component major and the degree-o
    component minor, so that with ``Q = cg_block(o, i, J)``:

        (wigner_d(i, r) kron wigner_d(o, r)) @ Q == Q @ wigner_d(J, r)

    Columns are orthonormal. Requires |o - i| <= J <= o + i.
    """
    o = _check_degree(o, "output degree")
    i = _check_degree(i, "input degree")
    J = _check_degree(J, "coupling degree J")
    if not (abs(o - i) <= J <= o + i):
        raise ValueError(f"J={J} violates the triangle range |{o}-{i}|..{o}+{i}")
    key = (o, i, J)
    if key in _CG_CACHE:
        return _CG_CACHE[key]
    gi = generators(i)
    go = generators(o)
    di, do = 2 * i + 1, 2 * o + 1
    gens = [np.kron(a, np.eye(do)) + np.kron(np.eye(di), b) for a, b in zip(gi, go)]
    basis = _casimir_eigenspace(gens, J)
    h_gens = [basis.T @ g @ basis for g in gens]
    q = basis @ _schur_intertwiner(h_gens, J)
    # fix the overall sign by the first significant entry
    flat = q.ravel()
    first = flat[np.abs(flat) > 1e-8 * np.abs(flat).max()][0]
    if first < 0:
        q = -q
    q = np.ascontiguousarray(q)
    q.setflags(write=False)
    _CG_CACHE[key] = q
    return q


def bi_cg_block(o: tuple[int, int], i: tuple[int, int], J1: int, J2: int) -> np.ndarray:
    """Second-order coupling block for degree pairs.

    With row index ordered (i-pair major, o-pair minor) to match
    ``kron(rho_i(r1, r2), rho_o(r1, r2))``, the stacked blocks
    block-diagonalize that product representation into blocks
    ``wigner_d(J1, r1) kron wigner_d(J2, r2)``.  The factors of the two
    first-order blocks are interleaved accordingly (a plain Kronecker
    product would order them as i1, o1, i2, o2).
    """
    o1, o2 = o
    i1, i2 = i
    c1 = cg_block(o1, i1, J1)
    c2 = cg_block(o2, i2, J2)
    d_i1, d_o1, d_J1 = 2 * i1 + 1, 2 * o1 + 1, 2 * J1 + 1
    d_i2, d_o2, d_J2 = 2 * i2 + 1, 2 * o2 + 1, 2 * J2 + 1
    t1 = c1.reshape(d_i1, d_o1, d_J1)
    t2 = c2.reshape(d_i2, d_o2, d_J2)
    q = np.einsum("ipm,jqn->ijpqmn", t1, t2)
    return q.reshape(d_i1 * d_i2 * d_o1 * d_o2, d_J1 * d_J2)


def harmonics_batch(J: int, u: np.ndarray) -> np.ndarray:
    """Degree-J real harmonics of unit vectors, batched.

    ``u`` has shape (..., 3) and must already be normalized; rows are not
    checked here (see ``real_harmonics`` for the validated scalar entry
    point).  Output shape is (..., 2J+1) with unit Euclidean norm per row.
    """
    J = _check_degree(J, "harmonic degree")
    u = np.asarray(u, dtype=float)
    if J == 0:
        return np.ones(u.shape[:-1] + (1,))
    if J == 1:
        return u.copy()
    lower = harmonics_batch(J - 1, u)
    # project the (1 x J-1) tensor product onto its top degree
    prod = np.einsum("...i,...j->...ij", u, lower)
    prod = prod.reshape(u.shape[:-1] + (3 * (2 * J - 1),))
    block = cg_block(J - 1, 1, J)
    out = prod @ block
    if J not in _HARMONIC_NORM_CACHE:
        ref = np.einsum(
            "i,j->ij", np.array([0.0, 0.0, 1.0]),
            harmonics_batch(J - 1, np.array([0.0, 0.0, 1.0])),
        ).reshape(-1) @ block
        _HARMONIC_NORM_CACHE[J] = float(np.linalg.norm(ref))
    return out / _HARMONIC_NORM_CACHE[J]


def real_harmonics(J: int, u: np.ndarray) -> np.ndarray:
    """Degree-J real spherical harmonics of a unit 3-vector.

    Satisfies ``real_harmonics(J, r @ u) == wigner_d(J, r) @ real_harmonics(J, u)``
    and has unit Euclidean norm for every unit input.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {u.shape}")
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise ValueError("zero-norm input has no direction")
    return harmonics_batch(J, u / norm)
