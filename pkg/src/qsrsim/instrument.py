"""Single-shot generalized measurements on a finite outcome set.

A measurement is described by a :class:`QSRep`: channels ``i`` with weights
``alpha[i]``, input probability vectors ``nu[i]`` over the outcomes, and
evolution operators ``ops[i, w]``. The instrument, POV measure, output law and
posterior states are all finite sums over these arrays.

Outcome sets ``B`` are given as iterables of outcome labels.
"""

from __future__ import annotations

from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    ATOL_DECOMP,
    ATOL_EXACT,
    adjoint,
    as_operator,
    as_state,
    check_density,
    decode_array,
    encode_array,
    hermiticity_residual,
    norm_sq,
    spectral,
)
from .report import Report


class NullEventError(ValueError):
    """Conditioning on an outcome set of zero probability."""


@dataclass(frozen=True, eq=False)
class QSRep:
    """Finite-outcome quantum stochastic representation.

    Attributes:
        outcomes: outcome labels, one per column of ``nu``.
        alpha: channel weights, shape ``(n_channels,)``.
        nu: per-channel input probabilities, shape ``(n_channels, n_outcomes)``.
        ops: evolution operators, shape ``(n_channels, n_outcomes, d, d)``.
    """

    outcomes: tuple[Hashable, ...]
    alpha: np.ndarray
    nu: np.ndarray
    ops: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        nu = np.atleast_2d(np.asarray(self.nu, dtype=float))
        ops = np.asarray(self.ops, dtype=complex)
        if ops.ndim == 3:
            ops = ops[None]
        n_ch, n_out = nu.shape
        if alpha.shape != (n_ch,):
            raise ValueError("alpha and nu disagree on the number of channels")
        if ops.ndim != 4 or ops.shape[:2] != (n_ch, n_out) or ops.shape[2] != ops.shape[3]:
            raise ValueError(f"ops must have shape ({n_ch}, {n_out}, d, d), got {ops.shape}")
        if len(self.outcomes) != n_out:
            raise ValueError("number of outcome labels does not match nu")
        if len(set(self.outcomes)) != n_out:
            raise ValueError("outcome labels must be distinct")
        for a in (alpha, nu, ops):
            a.setflags(write=False)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "ops", ops)

    @property
    def dim(self) -> int:
        return self.ops.shape[-1]

    @property
    def n_channels(self) -> int:
        return self.nu.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.nu.shape[1]

    def index(self, outcome: Hashable) -> int:
        try:
            return self.outcomes.index(outcome)
        except ValueError:
            raise KeyError(f"unknown outcome {outcome!r}") from None

    def indices(self, subset: Iterable[Hashable] | None) -> list[int]:
        if subset is None:
            return list(range(self.n_outcomes))
        return sorted({self.index(w) for w in subset})

    @classmethod
    def simple(cls, outcomes: Sequence[Hashable], nu, ops) -> "QSRep":
        """One-channel representation."""
        return cls(tuple(outcomes), np.ones(1), np.asarray(nu, dtype=float)[None], np.asarray(ops)[None])

    @classmethod
    def from_kraus(cls, kraus, outcomes: Sequence[Hashable] | None = None) -> "QSRep":
        """Simple representation of Kraus operators with uniform input law.

        The factor ``sqrt(n)`` is absorbed into the operators so that
        ``V(w) = sqrt(n) K_w`` and ``nu(w) = 1/n``.
        """
        kraus = np.asarray(kraus, dtype=complex)
        n = kraus.shape[0]
        outcomes = tuple(range(n)) if outcomes is None else tuple(outcomes)
        return cls.simple(outcomes, np.full(n, 1.0 / n), np.sqrt(n) * kraus)

    @classmethod
    def mixture(cls, parts: Sequence["QSRep"], weights: Sequence[float]) -> "QSRep":
        """Stack simple representations sharing one outcome set as channels."""
        outcomes = parts[0].outcomes
        if any(p.outcomes != outcomes for p in parts):
            raise ValueError("channels must share the outcome set")
        nu = np.concatenate([p.nu for p in parts])
        ops = np.concatenate([p.ops for p in parts])
        alpha = np.concatenate([np.asarray(w, dtype=float) * p.alpha for p, w in zip(parts, weights)])
        return cls(outcomes, alpha, nu, ops)

    def to_dict(self) -> dict:
        return {
            "outcomes": list(self.outcomes),
            "channels": [
                {"alpha": float(a), "nu": nu.tolist(), "V": [encode_array(v) for v in ops]}
                for a, nu, ops in zip(self.alpha, self.nu, self.ops)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QSRep":
        outcomes = data["outcomes"]
        channels = data["channels"]
        if not channels:
            raise ValueError("a QSR needs at least one channel")
        alpha = [float(c["alpha"]) for c in channels]
        nu = [[float(x) for x in c["nu"]] for c in channels]
        ops = [[decode_array(v, ndim=2) for v in c["V"]] for c in channels]
        return cls(tuple(outcomes), np.array(alpha), np.array(nu), np.array(ops))


@dataclass(frozen=True, eq=False)
class InstrumentResult:
    """Everything the measurement predicts for one initial state."""

    qsr: QSRep
    rho0: np.ndarray
    output_law: np.ndarray
    unnormalized_family: np.ndarray
    channel_laws: np.ndarray
    posterior_family: dict[Hashable, np.ndarray] = field(default_factory=dict)

    def pov(self, subset: Iterable[Hashable] | None = None) -> np.ndarray:
        return pov(self.qsr, subset)

    def probability(self, subset: Iterable[Hashable] | None = None) -> float:
        return float(self.output_law[self.qsr.indices(subset)].sum())


# ---------------------------------------------------------------------------


def _sandwich(ops: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # V rho V^* for a stack of operators
    return ops @ rho @ np.conj(np.swapaxes(ops, -1, -2))


def _heisenberg(ops: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(ops, -1, -2)) @ y @ ops


def validate_qsr(q: QSRep, tol: float = ATOL_DECOMP) -> Report:
    """Check weights, input laws and per-channel operator normalization."""
    rep = Report("qsr")
    rep.add("weights_sum", abs(q.alpha.sum() - 1.0), ATOL_EXACT)
    # strict positivity has no meaningful size, so a violation reports inf
    rep.add("weights_positive", 0.0 if (q.alpha > 0).all() else float("inf"), 0.0)
    rep.add("input_measures_normalized", float(np.abs(q.nu.sum(axis=1) - 1.0).max()), ATOL_EXACT)
    rep.add("input_measures_nonnegative", max(0.0, -float(q.nu.min())), 0.0)
    eye = np.eye(q.dim)
    worst = 0.0
    for i in range(q.n_channels):
        m = np.einsum("w,wij->ij", q.nu[i], _heisenberg(q.ops[i], eye))
        worst = max(worst, float(np.linalg.norm(m - eye)))
    rep.add("operator_normalization", worst, tol)
    # every integral over a finite outcome set is a finite sum of bounded operators
    rep.add("boundedness", 0.0, 0.0, note="automatic for finite outcome sets")
    return rep


def check_cross_measures(q: QSRep, densities, reference, tol: float = ATOL_DECOMP) -> Report:
    """Verify the full orthonormality relations for user-supplied densities.

    Args:
        q: representation whose operators are tested.
        densities: complex array ``(n_channels, n_channels, n_outcomes)`` with
            entry ``[j, i, w]`` the density of the ``(j, i)`` measure.
        reference: common reference measure over the outcomes.
    """
    qd = np.asarray(densities, dtype=complex)
    ref = np.asarray(reference, dtype=float)
    n = q.n_channels
    if qd.shape != (n, n, q.n_outcomes) or ref.shape != (q.n_outcomes,):
        raise ValueError("density table has the wrong shape")
    rep = Report("cross_measures")
    scalar = np.einsum("jiw,w->ji", qd, ref)
    rep.add("scalar_orthonormality", float(np.abs(scalar - np.eye(n)).max()), ATOL_EXACT)
    eye = np.eye(q.dim)
    worst = 0.0
    for j in range(n):
        for i in range(n):
            m = np.einsum("w,wab->ab", qd[j, i] * ref,
                          np.conj(np.swapaxes(q.ops[j], -1, -2)) @ q.ops[i])
            worst = max(worst, float(np.linalg.norm(m - (i == j) * eye)))
    rep.add("operator_orthonormality", worst, tol)
    diag = np.einsum("iiw->iw", qd).real * ref
    rep.add("diagonal_matches_nu", float(np.abs(diag - q.nu).max()), ATOL_EXACT)
    return rep


def dual_instrument(q: QSRep, subset: Iterable[Hashable] | None, y) -> np.ndarray:
    """Heisenberg-picture instrument ``N(B)[Y]``."""
    idx = q.indices(subset)
    y = as_operator(y, q.dim)
    out = np.zeros((q.dim, q.dim), dtype=complex)
    for i in range(q.n_channels):
        terms = _heisenberg(q.ops[i, idx], y)
        out += q.alpha[i] * np.einsum("w,wab->ab", q.nu[i, idx], terms)
    return out


def instrument(q: QSRep, subset: Iterable[Hashable] | None, kappa) -> np.ndarray:
    """Schrödinger-picture instrument ``M(B)[kappa]``."""
    idx = q.indices(subset)
    kappa = as_operator(kappa, q.dim)
    out = np.zeros((q.dim, q.dim), dtype=complex)
    for i in range(q.n_channels):
        terms = _sandwich(q.ops[i, idx], kappa)
        out += q.alpha[i] * np.einsum("w,wab->ab", q.nu[i, idx], terms)
    return out


def pov(q: QSRep, subset: Iterable[Hashable] | None = None) -> np.ndarray:
    return dual_instrument(q, subset, np.eye(q.dim))


def measure(q: QSRep, rho0) -> InstrumentResult:
    """Output law, unnormalized states and posteriors for every outcome."""
    rho0 = as_operator(rho0, q.dim)
    sand = np.stack([_sandwich(q.ops[i], rho0) for i in range(q.n_channels)])
    weights = q.alpha[:, None] * q.nu  # (channels, outcomes)
    channel_laws = np.einsum("iwaa->iw", sand).real * q.nu
    unnorm = np.einsum("iw,iwab->wab", weights, sand)
    law = np.einsum("waa->w", unnorm).real
    posts = {}
    for k, w in enumerate(q.outcomes):
        if law[k] > 0:
            posts[w] = unnorm[k] / law[k]
    return InstrumentResult(q, rho0, law, unnorm, channel_laws, posts)


def apply_instrument(q: QSRep, rho0, subset: Iterable[Hashable] | None) -> tuple[float, np.ndarray]:
    """Probability of the event ``B`` and the posterior state given ``B``.

    Raises:
        NullEventError: if the event has zero probability.
    """
    rho0 = check_density(rho0)
    out = instrument(q, subset, rho0)
    prob = float(np.trace(out).real)
    if prob <= 0.0:
        raise NullEventError("conditioning on null event: outcome set has zero probability")
    return prob, out / prob


def duality_check(q: QSRep, kappa, y, subset: Iterable[Hashable] | None) -> float:
    """``|tr(kappa N(B)[Y]) - tr(M(B)[kappa] Y)|``."""
    lhs = np.trace(as_operator(kappa, q.dim) @ dual_instrument(q, subset, y))
    rhs = np.trace(instrument(q, subset, kappa) @ as_operator(y, q.dim))
    return float(abs(lhs - rhs))


def channel_posterior_prob(q: QSRep, psi0, outcome: Hashable) -> np.ndarray:
    """Probabilities of the per-channel posterior pure states at ``outcome``."""
    psi0 = as_state(psi0, q.dim)
    k = q.index(outcome)
    w = np.array([q.alpha[i] * q.nu[i, k] * norm_sq(q.ops[i, k] @ psi0) for i in range(q.n_channels)])
    total = w.sum()
    if total <= 0.0:
        raise NullEventError(f"outcome {outcome!r} has zero total weight")
    return w / total


def von_neumann_qsr(z, degeneracy_tol: float = 1e-8) -> QSRep:
    """Projective measurement of ``z``: one outcome per distinct eigenvalue."""
    if hermiticity_residual(as_operator(z)) > ATOL_DECOMP:
        raise ValueError("von Neumann measurement requires a Hermitian observable")
    dec = spectral(z, degeneracy_tol)
    n = len(dec.eigenvalues)
    ops = np.sqrt(n) * np.array(dec.projectors)
    return QSRep.simple(dec.eigenvalues, np.full(n, 1.0 / n), ops)


def unconditional_state(q: QSRep, rho0) -> np.ndarray:
    return instrument(q, None, check_density(rho0))
