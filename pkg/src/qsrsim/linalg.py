"""Dense complex linear algebra on small Hilbert spaces.

Operators are plain ``numpy`` arrays of shape ``(d, d)``, state vectors are
arrays of shape ``(d,)``. The helpers here validate shapes, build common
fixtures (Pauli matrices, kets) and compute the metrics used by every check
in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATOL_EXACT = 1e-12
ATOL_DECOMP = 1e-10
DEGENERACY_TOL = 1e-8

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# lowering operator: |1> -> |0>
SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.T.copy()


class DimensionError(ValueError):
    pass


def as_operator(a, dim: int | None = None) -> np.ndarray:
    """Return ``a`` as a square complex matrix, optionally checking its size."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"operator must be square, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise DimensionError(f"expected {dim}x{dim} operator, got {m.shape}")
    return m


def as_state(v, dim: int | None = None) -> np.ndarray:
    s = np.asarray(v, dtype=complex)
    if s.ndim != 1:
        raise DimensionError(f"state vector must be 1-d, got shape {s.shape}")
    if dim is not None and s.shape[0] != dim:
        raise DimensionError(f"expected length-{dim} vector, got {s.shape}")
    return s


def _same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


def adjoint(a) -> np.ndarray:
    return np.conj(as_operator(a)).T


def ket(index: int, dim: int = 2) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def plus(dim: int = 2) -> np.ndarray:
    """Uniform superposition of the computational basis."""
    return np.ones(dim, dtype=complex) / np.sqrt(dim)


def minus() -> np.ndarray:
    return np.array([1, -1], dtype=complex) / np.sqrt(2)


def projector(psi) -> np.ndarray:
    psi = as_state(psi)
    return np.outer(psi, psi.conj())


def norm_sq(psi) -> float:
    psi = np.asarray(psi)
    return float(np.vdot(psi, psi).real)


def normalize(psi) -> np.ndarray:
    psi = as_state(psi)
    n = np.sqrt(norm_sq(psi))
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return psi / n


def hermitize(a) -> np.ndarray:
    a = as_operator(a)
    return 0.5 * (a + a.conj().T)


def hermiticity_residual(a) -> float:
    a = as_operator(a)
    return float(np.linalg.norm(a - a.conj().T))


def is_hermitian(a, tol: float = ATOL_DECOMP) -> bool:
    return hermiticity_residual(a) <= tol


def unitarity_residual(u) -> float:
    u = as_operator(u)
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])))


def check_density(rho, tol: float = ATOL_DECOMP) -> np.ndarray:
    """Validate a density operator and return it as an array.

    Raises:
        ValueError: if ``rho`` is not Hermitian, positive semidefinite and of
            unit trace within ``tol``.
    """
    rho = as_operator(rho)
    if hermiticity_residual(rho) > tol:
        raise ValueError("density operator is not Hermitian")
    lo = float(np.linalg.eigvalsh(hermitize(rho)).min())
    if lo < -tol:
        raise ValueError(f"density operator has negative eigenvalue {lo:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise ValueError(f"density operator has trace {tr.real:.12g}")
    return rho


def expectation(rho, z) -> complex:
    """``tr(rho z)``."""
    rho = as_operator(rho)
    z = as_operator(z)
    _same_dim(rho, z)
    return complex(np.einsum("ij,ji->", rho, z))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``.

    Also accepted for unnormalized operators, where it is simply the scaled
    trace norm of the difference.
    """
    a = as_operator(a)
    b = as_operator(b)
    _same_dim(a, b)
    return 0.5 * float(np.linalg.svd(a - b, compute_uv=False).sum())


def commutator(a, b) -> np.ndarray:
    a = as_operator(a)
    b = as_operator(b)
    _same_dim(a, b)
    return a @ b - b @ a


def commutator_norm(a, b) -> float:
    """Frobenius norm of ``[a, b]``."""
    return float(np.linalg.norm(commutator(a, b)))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (descending) with the projectors onto their eigenspaces."""

    eigenvalues: tuple[float, ...]
    projectors: tuple[np.ndarray, ...]

    def reconstruct(self) -> np.ndarray:
        return sum(lam * p for lam, p in zip(self.eigenvalues, self.projectors))

    def ranks(self) -> list[int]:
        return [int(round(np.trace(p).real)) for p in self.projectors]


def spectral(z, degeneracy_tol: float = DEGENERACY_TOL) -> SpectralDecomposition:
    """Group the eigenvectors of a Hermitian ``z`` into eigenspace projectors.

    Eigenvalues closer than ``degeneracy_tol`` to the first member of a group
    share one projector; the group's eigenvalue is the mean of its members.
    """
    z = as_operator(z)
    if hermiticity_residual(z) > ATOL_DECOMP:
        raise ValueError("spectral decomposition requires a Hermitian operator")
    w, v = np.linalg.eigh(hermitize(z))
    # eigh returns ascending values; stable sort on -w keeps index tie-breaking
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    values: list[float] = []
    projs: list[np.ndarray] = []
    start = 0
    for k in range(1, len(w) + 1):
        if k == len(w) or abs(w[k] - w[start]) > degeneracy_tol:
            block = v[:, start:k]
            values.append(float(w[start:k].mean()))
            projs.append(block @ block.conj().T)
            start = k
    return SpectralDecomposition(tuple(values), tuple(projs))


def eigenbasis(z, degeneracy_tol: float = DEGENERACY_TOL) -> tuple[list[float], list[np.ndarray]]:
    """Eigenvalues and rank-1 eigenvectors of a nondegenerate Hermitian ``z``."""
    dec = spectral(z, degeneracy_tol)
    if any(r != 1 for r in dec.ranks()):
        raise ValueError("observable has a degenerate spectrum")
    vecs = []
    for p in dec.projectors:
        # column with the largest weight gives a well-conditioned eigenvector
        j = int(np.argmax(np.abs(np.diag(p))))
        vecs.append(normalize(p[:, j]))
    return list(dec.eigenvalues), vecs


def kron(*ops) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return normalize(v)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return hermitize(g)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


# -- [re, im] pair encoding for JSON files ---------------------------------


def encode_array(a) -> list:
    """Nested lists of ``[re, im]`` pairs, row-major."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_array(data, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 2:
        raise ValueError("complex literals must be [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    if ndim is not None and out.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d complex array, got {out.ndim}-d")
    return out
