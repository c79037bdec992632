"""Discrete-time measurement chains on a finite outcome alphabet.

A :class:`ChainModel` is driven by a step kernel: for step ``k`` (1-based)
and the outcome history ``h = (x_1, ..., x_{k-1})`` it returns the stacked
operators ``V_k(a|h)`` and the conditional input probabilities ``p_k(a|h)``
for every symbol ``a``. Evolution operators along a record are ordered
products of these step operators, so the cocycle law holds by construction.

Trajectories are tuples of symbol *indices* into ``model.alphabet``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Hashable, Iterable, Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .grid import TimeGrid
from .instrument import QSRep
from .linalg import (
    ATOL_DECOMP,
    ATOL_EXACT,
    as_operator,
    as_state,
    hermitize,
    norm_sq,
    projector,
    spectral,
    trace_distance,
)
from .report import Report

Trajectory = tuple[int, ...]
Kernel = Callable[[int, Trajectory], tuple[np.ndarray, np.ndarray]]

ENUMERATION_CAP = 4096


class NotMarkovError(ValueError):
    """An unconditional map was requested from a history-dependent chain."""


@dataclass(frozen=True, eq=False)
class ChainModel:
    grid: TimeGrid
    alphabet: tuple[Hashable, ...]
    dim: int
    kernel: Kernel
    markov: bool = False
    name: str = ""

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    def step(self, k: int, history: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        if not 1 <= k <= self.n_steps:
            raise IndexError(f"step {k} outside 1..{self.n_steps}")
        if len(history) != k - 1:
            raise ValueError(f"step {k} needs a history of length {k - 1}, got {len(history)}")
        ops, probs = self.kernel(k, tuple(history))
        return np.asarray(ops, dtype=complex), np.asarray(probs, dtype=float)

    def enumerable(self, length: int | None = None, cap: int = ENUMERATION_CAP) -> bool:
        length = self.n_steps if length is None else length
        return self.n_symbols**length <= cap

    def labels(self, x: Iterable[int]) -> list[Hashable]:
        return [self.alphabet[a] for a in x]


# -- generators ---------------------------------------------------------------


def repeated_chain(q: QSRep, n_steps: int, dt: float = 1.0, name: str = "repeated") -> ChainModel:
    """Markov chain applying the same simple representation at every step."""
    if q.n_channels != 1:
        raise ValueError("only simple (one-channel) representations can drive a chain")
    ops, probs = q.ops[0], q.nu[0]
    return ChainModel(TimeGrid(n_steps, dt), q.outcomes, q.dim, lambda k, h: (ops, probs), True, name)


def projective_chain(z, n_steps: int, dt: float = 1.0) -> ChainModel:
    from .instrument import von_neumann_qsr

    return repeated_chain(von_neumann_qsr(z), n_steps, dt, "projective")


def kraus_chain(kraus, n_steps: int, dt: float = 1.0, alphabet: Sequence[Hashable] | None = None) -> ChainModel:
    return repeated_chain(QSRep.from_kraus(kraus, alphabet), n_steps, dt, "kraus-repeated")


def table_chain(steps: Sequence[tuple[np.ndarray, np.ndarray]], alphabet: Sequence[Hashable] | None = None,
                dt: float = 1.0) -> ChainModel:
    """Markov chain from explicit per-step ``(ops, probs)`` tables.

    No normalization is enforced here; use :func:`check_chain` to validate.
    """
    tables = [(np.asarray(o, dtype=complex), np.asarray(p, dtype=float)) for o, p in steps]
    n_sym = tables[0][1].shape[0]
    alphabet = tuple(range(n_sym)) if alphabet is None else tuple(alphabet)
    dim = tables[0][0].shape[-1]
    return ChainModel(TimeGrid(len(tables), dt), alphabet, dim, lambda k, h: tables[k - 1], True, "table")


def weak_kraus(axis, strength: float) -> np.ndarray:
    """Two-outcome weak measurement of a Pauli ``axis``: ``K_pm = sqrt((I +- s axis)/2)``."""
    axis = as_operator(axis)
    dec = spectral(axis)
    out = []
    for sign in (1.0, -1.0):
        k = sum(np.sqrt((1 + sign * strength * lam) / 2) * p for lam, p in zip(dec.eigenvalues, dec.projectors))
        out.append(k)
    return np.array(out)


def history_dependent_demo(n_steps: int = 3, strength: float = 0.6, dt: float = 1.0) -> ChainModel:
    """Chain whose step operators depend on the previous outcome.

    Step 1 is a weak ``sigma_z`` measurement; afterwards the measured axis is
    ``sigma_z`` when the previous outcome was 0 and ``sigma_x`` otherwise.
    """
    from .linalg import SX, SZ

    vz = np.sqrt(2) * weak_kraus(SZ, strength)
    vx = np.sqrt(2) * weak_kraus(SX, strength)
    half = np.full(2, 0.5)

    def kernel(k: int, h: Trajectory):
        if k == 1 or h[-1] == 0:
            return vz, half
        return vx, half

    return ChainModel(TimeGrid(n_steps, dt), (0, 1), 2, kernel, False, "history-dependent-demo")


# -- core operations ----------------------------------------------------------


def _check_span(m: ChainModel, x: Sequence[int], from_step: int, to_step: int) -> None:
    if not 0 <= from_step <= to_step:
        raise ValueError(f"need 0 <= from_step <= to_step, got {from_step}, {to_step}")
    if to_step > len(x):
        raise ValueError(f"trajectory of length {len(x)} is shorter than to_step={to_step}")
    if to_step > m.n_steps:
        raise ValueError(f"to_step={to_step} exceeds the grid ({m.n_steps} steps)")


def evolution_operator(m: ChainModel, x: Sequence[int], from_step: int, to_step: int) -> np.ndarray:
    """Ordered product ``V_to(x) ... V_{from+1}(x)`` along the record ``x``."""
    x = tuple(x)
    _check_span(m, x, from_step, to_step)
    out = np.eye(m.dim, dtype=complex)
    for k in range(from_step + 1, to_step + 1):
        ops, _ = m.step(k, x[: k - 1])
        out = ops[x[k - 1]] @ out
    return out


def input_weight(m: ChainModel, x: Sequence[int], from_step: int, to_step: int) -> float:
    """Input-law probability of ``x`` on steps ``from+1..to`` given its prefix."""
    x = tuple(x)
    _check_span(m, x, from_step, to_step)
    w = 1.0
    for k in range(from_step + 1, to_step + 1):
        _, probs = m.step(k, x[: k - 1])
        w *= probs[x[k - 1]]
    return w


def posterior_trajectory(m: ChainModel, psi0, x: Sequence[int]) -> list[np.ndarray]:
    """Unnormalized posterior vectors ``phi_k = V_0^k(x) psi0`` for ``k = 0..len(x)``."""
    x = tuple(x)
    _check_span(m, x, 0, len(x))
    phi = as_state(psi0, m.dim)
    out = [phi]
    for k in range(1, len(x) + 1):
        ops, _ = m.step(k, x[: k - 1])
        phi = ops[x[k - 1]] @ phi
        out.append(phi)
    return out


def trajectory_probability(m: ChainModel, psi0, x: Sequence[int]) -> float:
    phi = posterior_trajectory(m, psi0, x)[-1]
    return norm_sq(phi) * input_weight(m, x, 0, len(x))


def sample_trajectory(m: ChainModel, psi0, rng: np.random.Generator,
                      n_steps: int | None = None) -> tuple[Trajectory, list[np.ndarray]]:
    """Draw a record from the output law, one step at a time.

    At each step symbol ``a`` is chosen with probability
    ``p(a|h) ||V(a|h) phi||^2 / ||phi||^2``; one uniform variate per step.
    """
    n_steps = m.n_steps if n_steps is None else n_steps
    phi = as_state(psi0, m.dim)
    states = [phi]
    x: list[int] = []
    for k in range(1, n_steps + 1):
        ops, probs = m.step(k, x)
        cand = ops @ phi
        w = probs * np.einsum("ai,ai->a", cand.conj(), cand).real
        cdf = np.cumsum(w)
        u = rng.random() * cdf[-1]
        a = min(int(np.searchsorted(cdf, u, side="right")), len(w) - 1)
        x.append(a)
        phi = cand[a]
        states.append(phi)
    return tuple(x), states


def enumerate_trajectories(m: ChainModel, length: int) -> Iterator[Trajectory]:
    return itertools.product(range(m.n_symbols), repeat=length)


def pov_measure(m: ChainModel, up_to_step: int, prefixes: Iterable[Sequence[int]] | None = None) -> np.ndarray:
    """``sum_{x in B} V^*(x) V(x) p(x)`` over records of length ``up_to_step``."""
    if prefixes is None:
        prefixes = enumerate_trajectories(m, up_to_step)
    out = np.zeros((m.dim, m.dim), dtype=complex)
    for x in prefixes:
        x = tuple(x)
        if len(x) != up_to_step:
            raise ValueError(f"all prefixes must have length {up_to_step}, got {len(x)}")
        v = evolution_operator(m, x, 0, up_to_step)
        out += input_weight(m, x, 0, up_to_step) * (v.conj().T @ v)
    return out


def compatibility_check(m: ChainModel, tau_step: int, t_step: int) -> float:
    """Worst deviation of the POV density from its conditional extension average.

    For every ``tau``-prefix ``y`` compares
    ``sum_z V_0^t(yz)^* V_0^t(yz) p(z|y)`` with ``V_0^tau(y)^* V_0^tau(y)``.
    """
    if not 0 <= tau_step <= t_step <= m.n_steps:
        raise ValueError("need 0 <= tau_step <= t_step <= n_steps")
    worst = 0.0
    for y in enumerate_trajectories(m, tau_step):
        vy = evolution_operator(m, y, 0, tau_step)
        target = vy.conj().T @ vy
        acc = np.zeros_like(target)
        for z in enumerate_trajectories(m, t_step - tau_step):
            x = y + z
            v = evolution_operator(m, x, 0, t_step)
            acc += input_weight(m, x, tau_step, t_step) * (v.conj().T @ v)
        worst = max(worst, float(np.linalg.norm(acc - target)))
    return worst


def conditional_instrument(m: ChainModel, past: Sequence[int], from_step: int, to_step: int,
                           extensions: Iterable[Sequence[int]] | None, rho) -> np.ndarray:
    """``sum_{x in B} V_from^to(past x) rho V^*(...) p(x|past)``."""
    past = tuple(past)
    if len(past) != from_step:
        raise ValueError(f"past must have length from_step={from_step}, got {len(past)}")
    if to_step < from_step or to_step > m.n_steps:
        raise ValueError("invalid step range")
    rho = as_operator(rho, m.dim)
    if extensions is None:
        extensions = enumerate_trajectories(m, to_step - from_step)
    out = np.zeros((m.dim, m.dim), dtype=complex)
    for z in extensions:
        z = tuple(z)
        if len(z) != to_step - from_step:
            raise ValueError("extension length does not match the step range")
        x = past + z
        v = evolution_operator(m, x, from_step, to_step)
        out += input_weight(m, x, from_step, to_step) * (v @ rho @ v.conj().T)
    return out


def compose_instruments(m: ChainModel, tau_step: int, t_step: int, rho,
                        first: Iterable[Sequence[int]] | None = None,
                        second: Iterable[Sequence[int]] | None = None) -> np.ndarray:
    """``sum_{y in B1} M_tau^t(B2|y)[M_0^tau({y})[rho]]``."""
    second = None if second is None else [tuple(z) for z in second]
    if first is None:
        first = enumerate_trajectories(m, tau_step)
    out = np.zeros((m.dim, m.dim), dtype=complex)
    for y in first:
        y = tuple(y)
        inner = conditional_instrument(m, (), 0, tau_step, [y], rho)
        out += conditional_instrument(m, y, tau_step, t_step, second, inner)
    return out


def composition_residual(m: ChainModel, tau_step: int, t_step: int, rho,
                         first: Iterable[Sequence[int]] | None = None,
                         second: Iterable[Sequence[int]] | None = None) -> float:
    """Direct instrument on ``B1 x B2`` against the composed conditional instruments."""
    first = list(enumerate_trajectories(m, tau_step)) if first is None else [tuple(y) for y in first]
    second = list(enumerate_trajectories(m, t_step - tau_step)) if second is None else [tuple(z) for z in second]
    direct = conditional_instrument(m, (), 0, t_step, [y + z for y in first for z in second], rho)
    composed = compose_instruments(m, tau_step, t_step, rho, first, second)
    return float(np.linalg.norm(direct - composed))


def unconditional_map(m: ChainModel, from_step: int, to_step: int, rho) -> np.ndarray:
    """Dynamical map ``M_s^t(Omega)[rho]`` of a Markov chain.

    Raises:
        NotMarkovError: for history-dependent chains, whose conditional maps
            do not reduce to a two-parameter family.
    """
    if not m.markov:
        raise NotMarkovError("unconditional map is conditional on the past for a non-Markov chain")
    # any past will do for a Markov kernel
    return conditional_instrument(m, (0,) * from_step, from_step, to_step, None, rho)


# -- invariant batteries --------------------------------------------------------


def cocycle_residual(m: ChainModel, x: Sequence[int]) -> float:
    """Worst ``||V_tau^t - V_s^t V_tau^s||`` over all ``tau <= s <= t`` along ``x``."""
    x = tuple(x)
    n = len(x)
    ops = {(a, b): evolution_operator(m, x, a, b) for a in range(n + 1) for b in range(a, n + 1)}
    worst = 0.0
    for tau in range(n + 1):
        for s in range(tau, n + 1):
            for t in range(s, n + 1):
                worst = max(worst, float(np.linalg.norm(ops[tau, t] - ops[s, t] @ ops[tau, s])))
    return worst


def normalization_residual(m: ChainModel, psi0, length: int) -> float:
    """``|sum_x ||phi(x)||^2 p(x) - 1|`` over all records of ``length``."""
    total = sum(trajectory_probability(m, psi0, x) for x in enumerate_trajectories(m, length))
    return abs(total - norm_sq(psi0))


def averaged_posterior(m: ChainModel, psi0, length: int) -> np.ndarray:
    """``sum_x |phi(x)><phi(x)| p(x)`` over all records of ``length``."""
    out = np.zeros((m.dim, m.dim), dtype=complex)
    for x in enumerate_trajectories(m, length):
        phi = posterior_trajectory(m, psi0, x)[-1]
        out += input_weight(m, x, 0, length) * np.outer(phi, phi.conj())
    return out


def averaging_residual(m: ChainModel, psi0, length: int) -> float:
    """Trace distance between the averaged posteriors and the composed instrument."""
    rho0 = projector(psi0)
    if length == 0:
        return trace_distance(averaged_posterior(m, psi0, 0), rho0)
    if length == 1:
        reference = conditional_instrument(m, (), 0, 1, None, rho0)
    else:
        reference = compose_instruments(m, length - 1, length, rho0)
    return trace_distance(averaged_posterior(m, psi0, length), reference)


def markov_independence_residual(m: ChainModel, from_step: int, to_step: int, rho,
                                 pasts: Iterable[Sequence[int]] | None = None) -> float:
    """Largest trace distance from the conditional instrument of the first past to that of any other."""
    if pasts is None:
        pasts = enumerate_trajectories(m, from_step)
    outs = [conditional_instrument(m, tuple(p), from_step, to_step, None, rho) for p in pasts]
    return max((trace_distance(o, outs[0]) for o in outs[1:]), default=0.0)


def kernel_residuals(m: ChainModel, k: int, history: Sequence[int]) -> tuple[float, float, float]:
    """Input-law sum, negativity and operator-normalization residuals of one step."""
    ops, probs = m.step(k, history)
    eye = np.eye(m.dim)
    gram = np.einsum("a,aji,ajk->ik", probs, ops.conj(), ops)
    return abs(probs.sum() - 1.0), max(0.0, -float(probs.min())), float(np.linalg.norm(gram - eye))


def check_chain(m: ChainModel, psi0=None, rng: np.random.Generator | None = None,
                cap: int = ENUMERATION_CAP, n_samples: int = 2000, tol: float = ATOL_DECOMP) -> Report:
    """Run the full invariant battery on a chain.

    Exhaustive when ``|A|^n <= cap``; otherwise the POV normalization and the
    norm martingale are estimated by sampling records from the input law and
    judged at three standard errors.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    psi0 = np.eye(m.dim, dtype=complex)[0] if psi0 is None else as_state(psi0, m.dim)
    n = m.n_steps
    rep = Report(f"chain:{m.name}")
    exhaustive = m.enumerable(n, cap)
    rep.info["mode"] = "exhaustive" if exhaustive else "monte-carlo"
    rep.info["paths"] = m.n_symbols**n

    if exhaustive:
        histories = [h for k in range(1, n + 1) for h in enumerate_trajectories(m, k - 1)]
    else:
        histories = [x[: k - 1] for x in _sample_input_paths(m, rng, 64) for k in range(1, n + 1)]
    s_res = neg = op_res = 0.0
    for h in histories:
        a, b, c = kernel_residuals(m, len(h) + 1, h)
        s_res, neg, op_res = max(s_res, a), max(neg, b), max(op_res, c)
    rep.add("kernel_input_law_sum", s_res, ATOL_EXACT)
    rep.add("kernel_input_law_nonnegative", neg, 0.0)
    rep.add("kernel_operator_normalization", op_res, tol)

    if exhaustive:
        eye = np.eye(m.dim)
        rep.add("pov_normalization", max(float(np.linalg.norm(pov_measure(m, k) - eye)) for k in range(n + 1)), tol)
        rep.add("cocycle", max(cocycle_residual(m, x) for x in enumerate_trajectories(m, n)), 1e-13)
        rep.add("martingale_compatibility",
                max(compatibility_check(m, tau, t) for t in range(n + 1) for tau in range(t + 1)), tol)
        rep.add("posterior_normalization", max(normalization_residual(m, psi0, k) for k in range(n + 1)), tol)
        rep.add("averaging", max(averaging_residual(m, psi0, k) for k in range(n + 1)), tol)
        rho = projector(psi0)
        rep.add("instrument_composition",
                max(composition_residual(m, tau, n, rho) for tau in range(n + 1)), tol)
    else:
        paths = _sample_input_paths(m, rng, n_samples)
        eye = np.eye(m.dim)
        grams = np.array([_gram(m, x) for x in paths])
        mean = grams.mean(axis=0)
        se = grams.std(axis=0, ddof=1) / math.sqrt(len(paths))
        excess = np.abs(mean - eye) - 3 * se
        rep.add("pov_normalization_mc", max(0.0, float(excess.max())), 0.0, note="|mean - I| <= 3 SE elementwise")
        norms = np.array([norm_sq(posterior_trajectory(m, psi0, x)[-1]) for x in paths])
        gap = abs(norms.mean() - norm_sq(psi0)) - 3 * norms.std(ddof=1) / math.sqrt(len(paths))
        rep.add("norm_martingale_mc", max(0.0, float(gap)), 0.0, note="|mean - 1| <= 3 SE")
        rep.add("cocycle", max(cocycle_residual(m, x) for x in paths[:32]), 1e-13)

    if m.markov and n >= 1:
        rho = hermitize(projector(psi0) + 0.25 * np.eye(m.dim))
        rho /= np.trace(rho).real
        worst = 0.0
        for s in range(1, n):
            pasts = list(enumerate_trajectories(m, s)) if exhaustive else _sample_input_paths(m, rng, 8, s)
            worst = max(worst, markov_independence_residual(m, s, n, rho, pasts))
        rep.add("markov_independence", worst, ATOL_EXACT)
    return rep


def _gram(m: ChainModel, x: Trajectory) -> np.ndarray:
    v = evolution_operator(m, x, 0, len(x))
    return v.conj().T @ v


def _sample_input_paths(m: ChainModel, rng: np.random.Generator, count: int,
                        length: int | None = None) -> list[Trajectory]:
    """Records drawn from the input law ``p`` (operators ignored)."""
    length = m.n_steps if length is None else length
    out = []
    for _ in range(count):
        x: list[int] = []
        for k in range(1, length + 1):
            _, probs = m.step(k, x)
            cdf = np.cumsum(probs)
            x.append(min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probs) - 1))
        out.append(tuple(x))
    return out
