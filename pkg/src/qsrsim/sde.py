"""Euler-Maruyama integration of the linear jump-diffusion Schrödinger equation.

The unnormalized state obeys

    dpsi = -K psi dt + sum_k L_k psi dW_k + sum_m J_m psi (dN_m - gamma_m dt)

with ``K + K^* = sum_k L_k^* L_k + sum_m gamma_m J_m^* J_m``. Noise is drawn
under the reference law: independent Wiener increments and Poisson counts of
rate ``gamma_m``, thinned to at most one jump per channel and step. The
squared norm of the state is then the likelihood of the record and a
martingale with mean ``||u||^2``.

All trajectory arithmetic goes through :func:`propagate`, which treats the
leading axis as a batch of independent trajectories. Each row is computed
with the same operation sequence whatever the batch size, so replayed noise
reproduces a trajectory bit for bit.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid
from .linalg import as_operator, as_state, hermiticity_residual, hermitize, projector
from .rng import blocks, trajectory_rng

MAX_RATE_DT = 0.1
BLOCK_SIZE = 256


class GridTooCoarseError(ValueError):
    pass


class DegenerateTrajectoryError(ValueError):
    """A trajectory whose norm vanished; it carries no likelihood."""


@dataclass(frozen=True, eq=False)
class SdeModel:
    H: np.ndarray
    diffusive: tuple[np.ndarray, ...]
    jumps: tuple[np.ndarray, ...]
    rates: np.ndarray
    K: np.ndarray

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_diffusive(self) -> int:
        return len(self.diffusive)

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    @property
    def max_rate(self) -> float:
        return float(self.rates.max()) if self.n_jumps else 0.0

    def dissipator_sum(self) -> np.ndarray:
        """``sum_k L_k^* L_k + sum_m gamma_m J_m^* J_m``."""
        out = np.zeros_like(self.K)
        for L in self.diffusive:
            out += L.conj().T @ L
        for g, J in zip(self.rates, self.jumps):
            out += g * (J.conj().T @ J)
        return out

    def invariant_residual(self) -> float:
        return float(np.linalg.norm(self.K + self.K.conj().T - self.dissipator_sum()))


def build_model(H, diffusive: Sequence = (), jumps: Sequence = (), rates: Sequence[float] = ()) -> SdeModel:
    """Assemble ``K = iH + (sum L^*L + sum gamma J^*J) / 2``.

    Raises:
        ValueError: for a non-Hermitian ``H``, a nonpositive rate or
            mismatched jump/rate lists.
    """
    H = as_operator(H)
    d = H.shape[0]
    if hermiticity_residual(H) > 1e-10:
        raise ValueError("H must be Hermitian")
    Ls = tuple(as_operator(L, d) for L in diffusive)
    Js = tuple(as_operator(J, d) for J in jumps)
    rates = np.asarray(rates, dtype=float).reshape(-1)
    if rates.shape[0] != len(Js):
        raise ValueError("need exactly one rate per jump operator")
    if (rates <= 0).any():
        raise ValueError("jump rates must be positive")
    diss = np.zeros((d, d), dtype=complex)
    for L in Ls:
        diss += L.conj().T @ L
    for g, J in zip(rates, Js):
        diss += g * (J.conj().T @ J)
    K = 1j * H + 0.5 * diss
    for a in (H, K, rates, *Ls, *Js):
        a.setflags(write=False)
    return SdeModel(H, Ls, Js, rates, K)


def counting_model(H, collapse: Sequence = (), rates: Sequence[float] = (), diffusive: Sequence = ()) -> SdeModel:
    """Model whose jumps apply ``C_m`` and whose mean dynamics is Lindbladian.

    Uses ``J_m = C_m - I`` and adds the Hermitian correction
    ``sum_m (i gamma_m / 2)(J_m - J_m^*)`` to ``H`` so that the averaged
    evolution has Hamiltonian ``H`` and collapse operators ``C_m``.
    """
    H = as_operator(H)
    eye = np.eye(H.shape[0])
    Js = [as_operator(C, H.shape[0]) - eye for C in collapse]
    Hm = H.astype(complex).copy()
    for g, J in zip(rates, Js):
        Hm += 0.5j * g * (J - J.conj().T)
    return build_model(hermitize(Hm), diffusive, Js, rates)


@dataclass(frozen=True)
class OutputConfig:
    """Constant coefficients of the observed output process.

    Shapes: ``c (n_out,)``, ``a (n_out, n_diffusive)``, ``g (n_out, n_jumps)``.
    """

    c: np.ndarray
    a: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float).reshape(c.shape[0], -1)
        g = np.asarray(self.g, dtype=float).reshape(c.shape[0], -1)
        if not (np.isfinite(c).all() and np.isfinite(a).all() and np.isfinite(g).all()):
            raise ValueError("output coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "g", g)

    @property
    def n_out(self) -> int:
        return self.c.shape[0]

    def check(self, model: SdeModel) -> None:
        if self.a.shape[1] != model.n_diffusive or self.g.shape[1] != model.n_jumps:
            raise ValueError("output config does not match the model's channel counts")

    @classmethod
    def default(cls, model: SdeModel) -> "OutputConfig":
        """One component per channel: the Wiener path or the unit-mark count."""
        n = model.n_diffusive + model.n_jumps
        n = max(n, 1)
        a = np.zeros((n, model.n_diffusive))
        g = np.zeros((n, model.n_jumps))
        a[np.arange(model.n_diffusive), np.arange(model.n_diffusive)] = 1.0
        g[model.n_diffusive + np.arange(model.n_jumps), np.arange(model.n_jumps)] = 1.0
        return cls(np.zeros(n), a, g)


@dataclass(frozen=True, eq=False)
class Noise:
    """Wiener increments ``dW (n_steps, n_diffusive)`` and jump flags ``dN (n_steps, n_jumps)``."""

    dW: np.ndarray
    dN: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.dW.shape[0]

    def slice(self, start: int, stop: int | None = None) -> "Noise":
        return Noise(self.dW[start:stop], self.dN[start:stop])


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    grid: TimeGrid
    psi: np.ndarray
    norm_sq: np.ndarray
    dW: np.ndarray
    dN: np.ndarray
    output_X: np.ndarray

    @property
    def jumps(self) -> list[tuple[float, int]]:
        """``(t_k, m)`` for a jump of channel ``m`` during step ``k``."""
        ks, ms = np.nonzero(self.dN)
        return [(float((k + 1) * self.grid.dt), int(m)) for k, m in zip(ks, ms)]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


def check_grid(model: SdeModel, dt: float) -> None:
    if model.max_rate * dt > MAX_RATE_DT:
        raise GridTooCoarseError(f"gamma_max*dt = {model.max_rate * dt:.3g} exceeds {MAX_RATE_DT}")


def draw_noise(model: SdeModel, grid: TimeGrid, rng: np.random.Generator) -> Noise:
    """All normals first, then one uniform per jump channel and step."""
    dW = rng.standard_normal((grid.n_steps, model.n_diffusive)) * math.sqrt(grid.dt)
    u = rng.random((grid.n_steps, model.n_jumps))
    dN = u < model.rates * grid.dt
    return Noise(dW, dN)


def drift_matrix(model: SdeModel, dt: float) -> np.ndarray:
    """``I - K dt - sum_m gamma_m J_m dt``: the no-event step map."""
    A = np.eye(model.dim, dtype=complex) - model.K * dt
    for g, J in zip(model.rates, model.jumps):
        A = A - (g * dt) * J
    return A


def _apply(op: np.ndarray, psi: np.ndarray) -> np.ndarray:
    # per-row sums in fixed order, independent of the batch size
    return np.einsum("ij,nj->ni", op, psi)


def _advance(A, Ls, Js, psi, dW, dN):
    out = _apply(A, psi)
    for k, L in enumerate(Ls):
        out += dW[:, k, None] * _apply(L, psi)
    # a jump multiplies the moved state by I + J_m, channels in index order
    for m, J in enumerate(Js):
        hit = dN[:, m]
        if hit.any():
            out[hit] += _apply(J, out[hit])
    return out


def step(model: SdeModel, psi, dt: float, dW: Sequence[float], jump_events: Sequence[int] = ()) -> np.ndarray:
    """One Euler-Maruyama update.

    The drift and diffusion move comes first; each firing channel then
    applies ``I + J_m``. This differs from adding ``J_m psi`` to the pre-step
    state only at order ``dt`` within a jump step, and makes an annihilating
    jump (``J = -I``) give exactly zero.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    psi = as_state(psi, model.dim)
    dW = np.asarray(dW, dtype=float).reshape(1, model.n_diffusive)
    dN = np.zeros((1, model.n_jumps), dtype=bool)
    for m in jump_events:
        dN[0, m] = True
    return _advance(drift_matrix(model, dt), model.diffusive, model.jumps, psi[None], dW, dN)[0]


def propagate(model: SdeModel, psi0, dt: float, dW: np.ndarray, dN: np.ndarray) -> np.ndarray:
    """Integrate a batch of trajectories under given noise.

    Args:
        psi0: initial states, shape ``(d,)`` or ``(batch, d)``.
        dW: ``(n_steps, n_diffusive)`` or ``(batch, n_steps, n_diffusive)``.
        dN: jump flags with the matching shape.

    Returns:
        States at every grid time, ``(n_steps + 1, d)`` or ``(batch, n_steps + 1, d)``.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    single = psi0.ndim == 1
    psi = psi0[None] if single else psi0
    dW = np.asarray(dW, dtype=float)
    dN = np.asarray(dN, dtype=bool)
    if single:
        dW, dN = dW[None], dN[None]
    if psi.shape[-1] != model.dim:
        raise ValueError("initial state dimension does not match the model")
    A = drift_matrix(model, dt)
    n = dW.shape[1]
    out = np.empty((psi.shape[0], n + 1, model.dim), dtype=complex)
    out[:, 0] = psi
    for k in range(n):
        psi = _advance(A, model.diffusive, model.jumps, psi, dW[:, k], dN[:, k])
        out[:, k + 1] = psi
    return out[0] if single else out


def output_process(cfg: OutputConfig, model: SdeModel, dt: float, noise: Noise) -> np.ndarray:
    """Left-point sums of the output integrals at every grid time, ``(n+1, n_out)``."""
    cfg.check(model)
    g = cfg.g
    gnorm = np.sum(g**2, axis=0)  # |g_m|^2 over output components
    counted = g * (gnorm / (1.0 + gnorm))  # phi(g_m) g_im
    compensated = g / (1.0 + g**2)
    dN = noise.dN.astype(float)
    incr = (
        cfg.c[None] * dt
        + noise.dW @ cfg.a.T
        + dN @ counted.T
        + (dN - model.rates[None] * dt) @ compensated.T
    )
    X = np.zeros((noise.n_steps + 1, cfg.n_out))
    np.cumsum(incr, axis=0, out=X[1:])
    return X


def simulate(model: SdeModel, u, grid: TimeGrid, output_cfg: OutputConfig | None,
             rng: np.random.Generator) -> TrajectoryRecord:
    check_grid(model, grid.dt)
    u = as_state(u, model.dim)
    cfg = OutputConfig.default(model) if output_cfg is None else output_cfg
    noise = draw_noise(model, grid, rng)
    psi = propagate(model, u, grid.dt, noise.dW, noise.dN)
    ns = np.einsum("ki,ki->k", psi.conj(), psi).real
    return TrajectoryRecord(grid, psi, ns, noise.dW, noise.dN, output_process(cfg, model, grid.dt, noise))


def replay(model: SdeModel, psi, grid: TimeGrid, noise: Noise, start: int = 0, stop: int | None = None) -> np.ndarray:
    """States on steps ``start..stop`` starting from ``psi`` at ``t_start``."""
    part = noise.slice(start, stop)
    return propagate(model, psi, grid.dt, part.dW, part.dN)


def flow_compose_check(model: SdeModel, u, grid: TimeGrid, rng: np.random.Generator,
                       start: int = 0, restarts: Sequence[int] | None = None) -> float:
    """One pass from ``start`` against restarts at intermediate steps with the same noise."""
    noise = draw_noise(model, grid, rng)
    n = grid.n_steps
    full = replay(model, u, grid, noise, start)
    if restarts is None:
        restarts = sorted({start, (start + n) // 2, start + (n - start) // 3, n})
    worst = 0.0
    for tau in restarts:
        if not start <= tau <= n:
            raise ValueError("restart step outside the integration window")
        again = replay(model, full[tau - start], grid, noise, tau)
        diff = np.linalg.norm(full[tau - start:] - again, axis=-1)
        worst = max(worst, float(diff.max()))
    return worst


def normalized_trajectory(record: TrajectoryRecord, floor: float = 0.0) -> list[tuple[np.ndarray, float]]:
    """Normalized posterior states paired with their likelihood weights.

    Raises:
        DegenerateTrajectoryError: if the norm vanishes at some grid time.
    """
    if (record.norm_sq <= floor).any():
        k = int(np.argmax(record.norm_sq <= floor))
        raise DegenerateTrajectoryError(f"norm vanished at step {k}")
    return [(p / math.sqrt(w), float(w)) for p, w in zip(record.psi, record.norm_sq)]


def weighted_average(records: Sequence[TrajectoryRecord]) -> tuple[np.ndarray, int]:
    """Likelihood-weighted average of normalized posteriors.

    Degenerate trajectories are excluded with a warning; they contribute
    zero weight anyway, so the estimate is unchanged by excluding them.

    Returns:
        states ``(n+1, d, d)`` averaged over all records, and the number
        of excluded trajectories.
    """
    excluded = 0
    acc = None
    for rec in records:
        try:
            pairs = normalized_trajectory(rec)
        except DegenerateTrajectoryError:
            excluded += 1
            continue
        terms = np.array([w * np.outer(s, s.conj()) for s, w in pairs])
        acc = terms if acc is None else acc + terms
    if excluded:
        warnings.warn(f"{excluded} degenerate trajectories excluded", RuntimeWarning, stacklevel=2)
    if acc is None:
        raise DegenerateTrajectoryError("every trajectory was degenerate")
    return acc / len(records), excluded


# -- ensembles ------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Reference-law averages over an ensemble of trajectories.

    ``states[k]`` estimates the averaged density operator at ``t_k``;
    ``stderr_re``/``stderr_im`` are the standard errors of its real and
    imaginary parts. ``jump_counts`` are raw (reference-law) means per
    channel; ``weighted_jump_counts`` weight each path by its final
    likelihood, which estimates the physical mean count.
    """

    grid: TimeGrid
    n_traj: int
    states: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    norm_sq_mean: np.ndarray
    norm_sq_stderr: np.ndarray
    jump_counts: np.ndarray
    jump_counts_stderr: np.ndarray
    weighted_jump_counts: np.ndarray
    weighted_jump_counts_stderr: np.ndarray
    extra: dict = field(default_factory=dict)

    def population(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        return self.states[:, index, index].real, self.stderr_re[:, index, index]


def _block_sums(model: SdeModel, u, grid: TimeGrid, master_seed: int, indices: range):
    noises = [draw_noise(model, grid, trajectory_rng(master_seed, i)) for i in indices]
    dW = np.stack([nz.dW for nz in noises])
    dN = np.stack([nz.dN for nz in noises])
    batch = np.broadcast_to(u, (len(noises), model.dim))
    psi = propagate(model, batch, grid.dt, dW, dN)
    outer = np.einsum("nki,nkj->nkij", psi, psi.conj())
    ns = np.einsum("nki,nki->nk", psi.conj(), psi).real
    counts = dN.sum(axis=1).astype(float)  # (batch, n_jumps)
    wcounts = counts * ns[:, -1, None]
    return (
        outer.sum(axis=0),
        (outer.real**2).sum(axis=0),
        (outer.imag**2).sum(axis=0),
        ns.sum(axis=0),
        (ns**2).sum(axis=0),
        counts.sum(axis=0),
        (counts**2).sum(axis=0),
        wcounts.sum(axis=0),
        (wcounts**2).sum(axis=0),
    )


def _block_task(args):
    return _block_sums(*args)


def _stderr(s1, s2, n):
    if n < 2:
        return np.zeros_like(s1)
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
    return np.sqrt(var / n)


def run_ensemble(model: SdeModel, u, grid: TimeGrid, n_traj: int, master_seed: int,
                 workers: int = 1, block_size: int = BLOCK_SIZE) -> EnsembleResult:
    """Average ``n_traj`` trajectories; trajectory ``i`` uses stream ``(master_seed, i)``.

    Work is split into fixed blocks of trajectory indices and block sums are
    reduced in index order, so the result does not depend on ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    check_grid(model, grid.dt)
    u = as_state(u, model.dim)
    tasks = [(model, u, grid, master_seed, r) for r in blocks(n_traj, block_size)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    sums = [parts[0][j].copy() for j in range(len(parts[0]))]
    for part in parts[1:]:
        for j, arr in enumerate(part):
            sums[j] += arr
    s_out, s_re2, s_im2, s_ns, s_ns2, s_c, s_c2, s_wc, s_wc2 = sums
    n = n_traj
    states = s_out / n
    states = 0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))
    return EnsembleResult(
        grid=grid,
        n_traj=n,
        states=states,
        stderr_re=_stderr(s_out.real, s_re2, n),
        stderr_im=_stderr(s_out.imag, s_im2, n),
        norm_sq_mean=s_ns / n,
        norm_sq_stderr=_stderr(s_ns, s_ns2, n),
        jump_counts=s_c / n,
        jump_counts_stderr=_stderr(s_c, s_c2, n),
        weighted_jump_counts=s_wc / n,
        weighted_jump_counts_stderr=_stderr(s_wc, s_wc2, n),
    )


def ensemble_state(model: SdeModel, u, grid: TimeGrid, n_traj: int, master_seed: int,
                   workers: int = 1) -> np.ndarray:
    """Monte Carlo estimate of the averaged density operator at every grid time."""
    return run_ensemble(model, u, grid, n_traj, master_seed, workers).states


# -- exact moments of the scheme --------------------------------------------------


def scheme_superoperator(model: SdeModel, dt: float) -> np.ndarray:
    """Exact one-step mean map of the Euler-Maruyama scheme on ``vec(rho)``.

    ``E[psi' psi'^*] = sum_p P(p) C_p (A rho A^* + dt sum_k L_k rho L_k^*) C_p^*``
    where ``C_p`` is the ordered product of ``I + J_m`` over the channels
    firing in pattern ``p``. Uses row-major vectorization,
    ``vec(X rho Y) = (X kron Y^T) vec(rho)``.
    """
    A = drift_matrix(model, dt)
    d = model.dim
    move = np.kron(A, A.conj())
    for L in model.diffusive:
        move += dt * np.kron(L, L.conj())
    S = np.zeros((d * d, d * d), dtype=complex)
    probs = model.rates * dt
    eye = np.eye(d, dtype=complex)
    for pattern in itertools.product((0, 1), repeat=model.n_jumps):
        w = 1.0
        C = eye
        for m, fired in enumerate(pattern):
            if fired:
                w *= probs[m]
                C = (eye + model.jumps[m]) @ C
            else:
                w *= 1.0 - probs[m]
        S += w * np.kron(C, C.conj()) @ move
    return S


def expected_states(model: SdeModel, rho0, grid: TimeGrid) -> np.ndarray:
    """Exact mean of ``|psi_k><psi_k|`` over the scheme's noise, all grid times."""
    rho0 = as_operator(rho0, model.dim)
    S = scheme_superoperator(model, grid.dt)
    d = model.dim
    out = np.empty((grid.n_steps + 1, d, d), dtype=complex)
    v = rho0.reshape(-1)
    out[0] = rho0
    for k in range(grid.n_steps):
        v = S @ v
        out[k + 1] = v.reshape(d, d)
    return out


def expected_pure(model: SdeModel, u, grid: TimeGrid) -> np.ndarray:
    return expected_states(model, projector(u), grid)


def linear_map(model: SdeModel, grid: TimeGrid, noise: Noise, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Matrix of ``psi -> psi_t`` under fixed noise, built column by column."""
    basis = np.eye(model.dim, dtype=complex)
    cols = [replay(model, e, grid, noise, start, stop)[-1] for e in basis]
    return np.stack(cols, axis=1)
