"""Master-equation integrator used as the oracle for unconditional dynamics."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .grid import TimeGrid
from .linalg import as_operator, hermiticity_residual, hermitize, trace_distance
from .sde import SdeModel

# RK4 is stable for h * |lambda| up to about 2.78; keep a wide margin
MAX_STEP_NORM = 0.5


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """``-i[H, rho] + sum_j r_j (C_j rho C_j^* - {C_j^* C_j, rho} / 2)``."""

    H: np.ndarray
    collapse: tuple[tuple[np.ndarray, float], ...] = ()

    def __post_init__(self):
        H = as_operator(self.H)
        if hermiticity_residual(H) > 1e-10:
            raise ValueError("H must be Hermitian")
        ops = tuple((as_operator(C, H.shape[0]), float(r)) for C, r in self.collapse)
        if any(r < 0 for _, r in ops):
            raise ValueError("collapse rates must be nonnegative")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "collapse", ops)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.H @ rho - rho @ self.H)
        for C, r in self.collapse:
            Cd = C.conj().T
            CdC = Cd @ C
            out += r * (C @ rho @ Cd - 0.5 * (CdC @ rho + rho @ CdC))
        return out

    def superoperator(self) -> np.ndarray:
        """Matrix on row-major ``vec(rho)``: ``vec(X rho Y) = (X kron Y^T) vec(rho)``."""
        d = self.dim
        eye = np.eye(d)
        S = -1j * (np.kron(self.H, eye) - np.kron(eye, self.H.T))
        for C, r in self.collapse:
            CdC = C.conj().T @ C
            S += r * (np.kron(C, C.conj()) - 0.5 * (np.kron(CdC, eye) + np.kron(eye, CdC.T)))
        return S

    def scale(self) -> float:
        """Upper bound on the generator's operator norm."""
        s = 2.0 * np.linalg.norm(self.H, 2)
        for C, r in self.collapse:
            s += 2.0 * r * np.linalg.norm(C, 2) ** 2
        return float(s)


def derive_generator(model: SdeModel) -> LindbladGenerator:
    """Generator of the averaged dynamics of a linear SSE model.

    Taking the Itô expectation of ``d(psi psi^*)`` gives
    ``-K rho - rho K^* + sum L rho L^* + sum gamma J rho J^*``. This is
    rewritten with collapse operators ``C_m = I + J_m`` (the state after a
    jump), diffusive operators ``L_k`` at unit rate, and the Hamiltonian
    ``(K - K^*)/(2i) - sum_m (i gamma_m / 2)(J_m - J_m^*)``; the second term
    compensates the shift from ``J_m`` to ``I + J_m``.
    """
    if model.invariant_residual() > 1e-10:
        raise ValueError("model violates K + K^* = sum L^*L + sum gamma J^*J")
    K = model.K
    H = (K - K.conj().T) / 2j
    eye = np.eye(model.dim)
    collapse = [(L, 1.0) for L in model.diffusive]
    for g, J in zip(model.rates, model.jumps):
        H = H - 0.5j * g * (J - J.conj().T)
        collapse.append((eye + J, float(g)))
    return LindbladGenerator(hermitize(H), tuple(collapse))


def ito_drift(model: SdeModel, rho) -> np.ndarray:
    """``d/dt E[psi psi^*]`` read off the SSE coefficients directly."""
    rho = as_operator(rho, model.dim)
    out = -model.K @ rho - rho @ model.K.conj().T
    for L in model.diffusive:
        out += L @ rho @ L.conj().T
    for g, J in zip(model.rates, model.jumps):
        out += g * (J @ rho @ J.conj().T)
    return out


def _rk4(gen: LindbladGenerator, rho: np.ndarray, h: float) -> np.ndarray:
    k1 = gen(rho)
    k2 = gen(rho + 0.5 * h * k1)
    k3 = gen(rho + 0.5 * h * k2)
    k4 = gen(rho + h * k3)
    return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve(gen: LindbladGenerator, rho0, grid: TimeGrid, refine: int = 1) -> np.ndarray:
    """RK4 solution at every grid time, ``refine`` substeps per grid step.

    Raises:
        StepSizeError: when the substep is too large for the generator.
    """
    rho = as_operator(rho0, gen.dim)
    h = grid.dt / refine
    if h * gen.scale() > MAX_STEP_NORM:
        raise StepSizeError(f"step {h:.3g} too large for generator scale {gen.scale():.3g}")
    out = np.empty((grid.n_steps + 1, gen.dim, gen.dim), dtype=complex)
    out[0] = rho
    for k in range(grid.n_steps):
        for _ in range(refine):
            rho = _rk4(gen, rho, h)
        out[k + 1] = rho
    return out


def semigroup_check(gen: LindbladGenerator, rho0, grid: TimeGrid, split_step: int) -> float:
    """Trace distance between direct evolution and a restart at ``split_step``."""
    if not 0 <= split_step <= grid.n_steps:
        raise ValueError("split step outside the grid")
    direct = evolve(gen, rho0, grid)[-1]
    first = evolve(gen, rho0, TimeGrid(split_step, grid.dt))[-1] if split_step else as_operator(rho0)
    rest = grid.n_steps - split_step
    second = evolve(gen, first, TimeGrid(rest, grid.dt))[-1] if rest else first
    return trace_distance(direct, second)


def exact_evolve(gen: LindbladGenerator, rho0, times: Sequence[float]) -> np.ndarray:
    """Dense matrix exponential of the superoperator at each time."""
    S = gen.superoperator()
    d = gen.dim
    v = as_operator(rho0, d).reshape(-1)
    return np.array([(expm(S * t) @ v).reshape(d, d) for t in times])


def choi_min_eigenvalue(gen: LindbladGenerator, t: float) -> float:
    """Smallest eigenvalue of the Choi matrix of ``exp(t L)``."""
    d = gen.dim
    E = expm(gen.superoperator() * t)
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            eij = np.zeros((d, d))
            eij[i, j] = 1.0
            choi += np.kron(eij, (E @ eij.reshape(-1)).reshape(d, d))
    return float(np.linalg.eigvalsh(hermitize(choi)).min())
