"""Repeated-interaction dilation: a system meets a fresh probe at every step.

The global space is ``system (x) probe_1 (x) ... (x) probe_n``. Step ``k``
applies ``U_step`` to the system and probe ``k``; the probe is then measured
in the eigenbasis of the probe observable and never touched again. An
optional *recoupling* unitary acting on ``(system, probe_{k-1}, probe_k)``
breaks that last property and serves as the negative control.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .chain import ChainModel, enumerate_trajectories, evolution_operator, input_weight, posterior_trajectory
from .grid import TimeGrid
from .linalg import (
    SX,
    SZ,
    SpectralDecomposition,
    as_operator,
    as_state,
    commutator_norm,
    kron,
    norm_sq,
    spectral,
    unitarity_residual,
)
from .report import Report

DIM_CAP = 4096


class DimensionCapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProbeChain:
    system_dim: int
    probe_dim: int
    n_steps: int
    f: np.ndarray
    step_unitary: np.ndarray
    probe_observable: SpectralDecomposition
    recoupling: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        d, p = self.system_dim, self.probe_dim
        f = as_state(self.f, p)
        U = as_operator(self.step_unitary, d * p)
        if abs(norm_sq(f) - 1.0) > 1e-12:
            raise ValueError("probe state must be normalized")
        if unitarity_residual(U) > 1e-10:
            raise ValueError("step operator is not unitary")
        total = sum(self.probe_observable.projectors)
        if np.linalg.norm(total - np.eye(p)) > 1e-10:
            raise ValueError("probe projectors do not resolve the identity")
        if self.recoupling is not None:
            R = as_operator(self.recoupling, d * p * p)
            if unitarity_residual(R) > 1e-10:
                raise ValueError("recoupling operator is not unitary")
            object.__setattr__(self, "recoupling", R)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "step_unitary", U)

    @property
    def dims(self) -> list[int]:
        return [self.system_dim] + [self.probe_dim] * self.n_steps

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.probe_dim**self.n_steps

    @property
    def outcomes(self) -> tuple[float, ...]:
        return self.probe_observable.eigenvalues

    def probe_basis(self) -> list[np.ndarray]:
        """One unit vector per rank-1 probe projector.

        Raises:
            ValueError: when some projector has rank above one.
        """
        if any(r != 1 for r in self.probe_observable.ranks()):
            raise ValueError("probe observable must have rank-1 projectors")
        vecs = []
        for P in self.probe_observable.projectors:
            j = int(np.argmax(np.abs(np.diag(P))))
            v = P[:, j]
            vecs.append(v / math.sqrt(norm_sq(v)))
        return vecs

    def probe_value_operator(self) -> np.ndarray:
        return self.probe_observable.reconstruct()


# -- named constructions ------------------------------------------------------------


def z_basis_observable(p: int) -> SpectralDecomposition:
    """Computational-basis measurement: outcome ``a`` is ``|a><a|``, valued ``a``."""
    eye = np.eye(p, dtype=complex)
    return SpectralDecomposition(tuple(float(a) for a in range(p)), tuple(np.outer(e, e) for e in eye))


def cnot_chain(n_steps: int) -> ProbeChain:
    """System qubit controls a flip of a probe prepared in ``|0>``."""
    cnot = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
    return ProbeChain(2, 2, n_steps, np.array([1, 0]), cnot, z_basis_observable(2), name="cnot")


def partial_swap_chain(n_steps: int, theta: float, f=None) -> ProbeChain:
    swap = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
    U = expm(-1j * theta * swap)
    f = np.array([1, 0]) if f is None else f
    return ProbeChain(2, 2, n_steps, f, U, z_basis_observable(2), name=f"partial-swap {theta:g}")


def identity_chain(n_steps: int, system_dim: int = 2, probe_dim: int = 2) -> ProbeChain:
    f = np.zeros(probe_dim)
    f[0] = 1.0
    return ProbeChain(system_dim, probe_dim, n_steps, f, np.eye(system_dim * probe_dim),
                      z_basis_observable(probe_dim), name="identity")


def recoupling_chain(n_steps: int, angle: float = math.pi / 4) -> ProbeChain:
    """CNOT interactions followed by ``exp(-i angle X(x)X(x)X)`` on system and the last two probes."""
    base = cnot_chain(n_steps)
    R = expm(-1j * angle * kron(SX, SX, SX))
    return ProbeChain(2, 2, n_steps, base.f, base.step_unitary, base.probe_observable, R,
                      name="recoupling-counterexample")


# -- global operators -------------------------------------------------------------------


def embed(op, targets: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Lift ``op`` acting on the listed tensor factors (in that order) to the full space."""
    dims = list(dims)
    targets = list(targets)
    rest = [i for i in range(len(dims)) if i not in targets]
    order = targets + rest
    D = math.prod(dims)
    big = np.kron(as_operator(op), np.eye(math.prod(dims[i] for i in rest)))
    pd = [dims[i] for i in order]
    inv = list(np.argsort(order))
    T = big.reshape(pd + pd).transpose(inv + [len(dims) + i for i in inv])
    return T.reshape(D, D)


def step_operator(pc: ProbeChain, k: int) -> np.ndarray:
    """Global unitary of step ``k`` (1-based)."""
    G = embed(pc.step_unitary, [0, k], pc.dims)
    if pc.recoupling is not None and k >= 2:
        G = embed(pc.recoupling, [0, k - 1, k], pc.dims) @ G
    return G


def _check_cap(pc: ProbeChain) -> None:
    if pc.total_dim > DIM_CAP:
        raise DimensionCapError(f"dilation dimension {pc.total_dim} exceeds cap {DIM_CAP}")


def propagator(pc: ProbeChain, t: int, tau: int = 0) -> np.ndarray:
    """``U(t, tau)``: steps ``tau+1..t`` in order."""
    _check_cap(pc)
    if not 0 <= tau <= t <= pc.n_steps:
        raise ValueError("need 0 <= tau <= t <= n_steps")
    U = np.eye(pc.total_dim, dtype=complex)
    for k in range(tau + 1, t + 1):
        U = step_operator(pc, k) @ U
    return U


def build_global(pc: ProbeChain, t: int) -> np.ndarray:
    return propagator(pc, t, 0)


@dataclass(frozen=True, eq=False)
class GlobalOperators:
    U: tuple[np.ndarray, ...]
    Q_H: tuple[np.ndarray, ...]

    def Z_H(self, pc: ProbeChain, z, t: int) -> np.ndarray:
        Zfull = embed(as_operator(z, pc.system_dim), [0], pc.dims)
        return self.U[t].conj().T @ Zfull @ self.U[t]


def global_operators(pc: ProbeChain) -> GlobalOperators:
    """``U(t,0)`` for ``t = 0..n`` and the Heisenberg probe observables ``Q_H(k)``, ``k = 1..n``."""
    _check_cap(pc)
    Us = [np.eye(pc.total_dim, dtype=complex)]
    for k in range(1, pc.n_steps + 1):
        Us.append(step_operator(pc, k) @ Us[-1])
    Q = pc.probe_value_operator()
    QH = [None]
    for k in range(1, pc.n_steps + 1):
        Qk = embed(Q, [k], pc.dims)
        QH.append(Us[k].conj().T @ Qk @ Us[k])
    return GlobalOperators(tuple(Us), tuple(QH))


def nondemolition_check(pc: ProbeChain, z, t: int, s: int,
                        ops: GlobalOperators | None = None) -> tuple[float, float]:
    """Commutator norms ``||[Q_H(t), Q_H(s)]||`` and ``||[Z_H(t), Q_H(s)]||`` for ``t >= s >= 1``."""
    if not 1 <= s <= t <= pc.n_steps:
        raise ValueError("need 1 <= s <= t <= n_steps")
    ops = global_operators(pc) if ops is None else ops
    r1 = commutator_norm(ops.Q_H[t], ops.Q_H[s])
    r2 = commutator_norm(ops.Z_H(pc, z, t), ops.Q_H[s])
    return r1, r2


def _record_projector(pc: ProbeChain, x: Sequence[int], first_probe: int = 1) -> np.ndarray:
    """``I (x) P_{x_1} (x) ... `` on probes ``first_probe..first_probe+len(x)-1``."""
    projs = pc.probe_observable.projectors
    out = np.eye(pc.total_dim, dtype=complex)
    for j, a in enumerate(x):
        out = out @ embed(projs[a], [first_probe + j], pc.dims)
    return out


def record_commutation_residual(pc: ProbeChain, t: int, tau: int) -> float:
    """Worst ``||[U(t,tau), I (x) P^(0,tau](x)]||`` over records ``x`` of length ``tau``."""
    U = propagator(pc, t, tau)
    n_sym = len(pc.outcomes)
    worst = 0.0
    for x in itertools.product(range(n_sym), repeat=tau):
        worst = max(worst, commutator_norm(U, _record_projector(pc, x)))
    return worst


def initial_vector(pc: ProbeChain, psi) -> np.ndarray:
    return kron(as_state(psi, pc.system_dim)[:, None], *([pc.f[:, None]] * pc.n_steps))[:, 0]


def cocycle_at_vector_check(pc: ProbeChain, psi, t: int, tau: int, s: int) -> tuple[float, float]:
    """Residuals of the record commutation and of the cocycle law on ``psi (x) f (x) ... (x) f``.

    Returns:
        ``max_x ||[U(t,tau), I (x) P^(0,s](x)] v||`` and
        ``||U(t,s) v - U(t,tau) U(tau,s) v||``.
    """
    if not 1 <= s <= tau <= t <= pc.n_steps:
        raise ValueError("need 1 <= s <= tau <= t <= n_steps")
    v = initial_vector(pc, psi)
    U = propagator(pc, t, tau)
    worst = 0.0
    for x in itertools.product(range(len(pc.outcomes)), repeat=s):
        P = _record_projector(pc, x)
        worst = max(worst, float(np.linalg.norm(U @ (P @ v) - P @ (U @ v))))
    coc = float(np.linalg.norm(propagator(pc, t, s) @ v - U @ (propagator(pc, tau, s) @ v)))
    return worst, coc


# -- effective measurement chain -------------------------------------------------------


def partial_elements(pc: ProbeChain) -> np.ndarray:
    """``<e_a| U_step |f>`` on the probe factor, stacked over outcomes ``a``."""
    d, p = pc.system_dim, pc.probe_dim
    T = pc.step_unitary.reshape(d, p, d, p)
    return np.array([np.einsum("b,ibjc,c->ij", e.conj(), T, pc.f) for e in pc.probe_basis()])


def extract_qsr(pc: ProbeChain, dt: float = 1.0) -> ChainModel:
    """Markov chain with uniform input law and ``V(a) = sqrt(|A|) <e_a|U_step|f>``."""
    if pc.recoupling is not None:
        raise ValueError("a recoupling chain has no per-step measurement representation")
    K = partial_elements(pc)
    n = K.shape[0]
    ops = math.sqrt(n) * K
    probs = np.full(n, 1.0 / n)
    return ChainModel(TimeGrid(pc.n_steps, dt), pc.outcomes, pc.system_dim,
                      lambda k, h: (ops, probs), True, f"extracted:{pc.name}")


def probe_marginal(pc: ProbeChain) -> tuple[np.ndarray, np.ndarray]:
    """Probe outcome law for a maximally mixed system, and ``<f, P_a f>``.

    The first is ``tr[(I (x) P_a) U (I/d (x) |f><f|) U^*]`` computed on the
    dilation; it serves as the input law of :func:`rescaled_qsr`.
    """
    d, p = pc.system_dim, pc.probe_dim
    rho = np.kron(np.eye(d) / d, np.outer(pc.f, pc.f.conj()))
    out = pc.step_unitary @ rho @ pc.step_unitary.conj().T
    born = np.array([np.trace(np.kron(np.eye(d), P) @ out).real for P in pc.probe_observable.projectors])
    bare = np.array([np.vdot(pc.f, P @ pc.f).real for P in pc.probe_observable.projectors])
    return born, bare


def rescaled_qsr(pc: ProbeChain, dt: float = 1.0) -> ChainModel:
    """Same measurement with input law ``nu(a) = tr(K_a^* K_a)/d`` and ``V(a) = K_a / sqrt(nu(a))``."""
    K = partial_elements(pc)
    nu = np.einsum("aij,aij->a", K.conj(), K).real / pc.system_dim
    ops = np.array([k / math.sqrt(w) if w > 0 else np.zeros_like(k) for k, w in zip(K, nu)])
    return ChainModel(TimeGrid(pc.n_steps, dt), pc.outcomes, pc.system_dim,
                      lambda k, h: (ops, nu), True, f"rescaled:{pc.name}")


def global_conditioned(pc: ProbeChain, psi0, x: Sequence[int], U: np.ndarray | None = None) -> np.ndarray:
    """System vector ``(I (x) <e_x1| ... <e_xn|) U(n,0) (psi0 (x) f ... f)``."""
    U = propagator(pc, pc.n_steps) if U is None else U
    out = U @ initial_vector(pc, psi0)
    basis = pc.probe_basis()
    T = out.reshape(pc.dims)
    for a in reversed(x):
        T = np.tensordot(T, basis[a].conj(), axes=([T.ndim - 1], [0]))
    return T


def equivalence_check(pc: ProbeChain, psi0, n: int | None = None) -> float:
    """Deviation between extracted-chain predictions and Born-rule enumeration on the dilation.

    Compares trajectory probabilities and the conditioned system vectors
    (the chain's vector is weighted by ``sqrt`` of its input probability).
    """
    n = pc.n_steps if n is None else n
    if n != pc.n_steps:
        pc = ProbeChain(pc.system_dim, pc.probe_dim, n, pc.f, pc.step_unitary,
                        pc.probe_observable, pc.recoupling, pc.name)
    chain = extract_qsr(pc)
    U = propagator(pc, n)
    worst = 0.0
    for x in enumerate_trajectories(chain, n):
        g = global_conditioned(pc, psi0, x, U)
        phi = posterior_trajectory(chain, psi0, x)[-1]
        w = input_weight(chain, x, 0, n)
        worst = max(worst, abs(norm_sq(phi) * w - norm_sq(g)), float(np.linalg.norm(math.sqrt(w) * phi - g)))
    return worst


def trajectory_law(pc: ProbeChain, psi0) -> dict[tuple[int, ...], float]:
    U = propagator(pc, pc.n_steps)
    n_sym = len(pc.outcomes)
    return {x: norm_sq(global_conditioned(pc, psi0, x, U))
            for x in itertools.product(range(n_sym), repeat=pc.n_steps)}


# -- audit -----------------------------------------------------------------------------


def default_system_observables(d: int) -> list[np.ndarray]:
    if d == 2:
        return [SX, np.array([[0, -1j], [1j, 0]]), SZ]
    shift = np.roll(np.eye(d), 1, axis=0)
    return [np.diag(np.arange(d, dtype=float)), shift + shift.T]


def audit(pc: ProbeChain, observables: Sequence[np.ndarray] | None = None, psi=None,
          tol: float = 1e-9) -> Report:
    """All nondemolition residuals of a probe chain, over every time pair."""
    observables = default_system_observables(pc.system_dim) if observables is None else observables
    psi = np.eye(pc.system_dim)[0] if psi is None else psi
    ops = global_operators(pc)
    n = pc.n_steps
    rep = Report(f"nondemolition:{pc.name}")
    rep.info["total_dim"] = pc.total_dim
    r1 = r2 = 0.0
    for t in range(1, n + 1):
        for s in range(1, t + 1):
            for z in observables:
                a, b = nondemolition_check(pc, z, t, s, ops)
                r1, r2 = max(r1, a), max(r2, b)
    rep.add("probe_observables_commute", r1, tol)
    rep.add("system_commutes_with_past_probes", r2, tol)
    r3 = max((record_commutation_residual(pc, t, tau) for t in range(1, n + 1) for tau in range(1, t + 1)),
             default=0.0)
    rep.add("propagator_commutes_with_past_records", r3, tol)
    r81 = coc = 0.0
    for t in range(1, n + 1):
        for tau in range(1, t + 1):
            for s in range(1, tau + 1):
                a, b = cocycle_at_vector_check(pc, psi, t, tau, s)
                r81, coc = max(r81, a), max(coc, b)
    rep.add("record_commutation_on_vector", r81, tol)
    rep.add("cocycle_on_vector", coc, tol)
    rep.add("unitarity", max(unitarity_residual(U) for U in ops.U), tol)
    return rep
