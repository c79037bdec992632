from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def damping_kraus(p: float) -> np.ndarray:
    return np.array([[[1, 0], [0, math.sqrt(1 - p)]], [[0, math.sqrt(p)], [0, 0]]], dtype=complex)


def random_kraus(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` Kraus operators on ``C^d`` cut from a random isometry."""
    from qsrsim.linalg import random_unitary

    W = random_unitary(n * d, rng)[:, :d]
    return W.reshape(n, d, d)


def random_qsr(d: int, n_out: int, n_channels: int, rng: np.random.Generator):
    """Valid QSR with random input laws and operators rescaled to them."""
    from qsrsim.instrument import QSRep

    parts = []
    for _ in range(n_channels):
        K = random_kraus(d, n_out, rng)
        nu = rng.dirichlet(np.ones(n_out)) * 0.9 + 0.1 / n_out
        parts.append(QSRep.simple(tuple(range(n_out)), nu, K / np.sqrt(nu)[:, None, None]))
    w = rng.dirichlet(np.ones(n_channels)) * 0.9 + 0.1 / n_channels
    return QSRep.mixture(parts, w)
