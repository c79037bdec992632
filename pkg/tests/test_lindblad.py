from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsrsim.grid import TimeGrid
from qsrsim.lindblad import (
    LindbladGenerator,
    StepSizeError,
    choi_min_eigenvalue,
    derive_generator,
    evolve,
    exact_evolve,
    ito_drift,
    semigroup_check,
)
from qsrsim.linalg import SM, SX, SZ, ket, plus, projector, random_density, random_hermitian
from qsrsim.sde import build_model, counting_model, scheme_superoperator

seeds = st.integers(0, 2**32 - 1)


def random_model(seed: int, d: int = 2):
    rng = np.random.default_rng(seed)

    def op():
        return 0.5 * (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))

    return build_model(random_hermitian(d, rng), [op()], [op(), op()], rng.uniform(0.2, 1.5, 2))


def damping(gamma):
    return LindbladGenerator(np.zeros((2, 2)), ((SM, gamma),))


def test_diffusive_channel_maps_identically():
    g = 0.8
    L = math.sqrt(g) * SM
    gen = derive_generator(build_model(np.zeros((2, 2)), [L]))
    assert len(gen.collapse) == 1
    C, r = gen.collapse[0]
    assert r == 1.0 and np.allclose(C, L, atol=1e-15)
    assert np.abs(gen.H).max() <= 1e-15


def test_shifted_jump_gives_collapse_operator():
    g = 0.6
    model = build_model(np.zeros((2, 2)), [], [SM - np.eye(2)], [g])
    gen = derive_generator(model)
    C, r = gen.collapse[0]
    assert np.allclose(C, SM, atol=1e-15) and r == g
    rng = np.random.default_rng(1)
    for _ in range(5):
        rho = random_density(2, rng)
        assert np.linalg.norm(gen(rho) - ito_drift(model, rho)) <= 1e-12


def test_counting_model_reproduces_target_generator():
    rng = np.random.default_rng(2)
    H = random_hermitian(3, rng)
    C = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    target = LindbladGenerator(H, ((C, 0.7),))
    gen = derive_generator(counting_model(H, [C], [0.7]))
    assert np.linalg.norm(gen.superoperator() - target.superoperator()) <= 1e-12
    # pure amplitude damping has no Hamiltonian part left over
    gen = derive_generator(counting_model(np.zeros((2, 2)), [SM], [1.0]))
    assert np.abs(gen.H).max() <= 1e-15


@given(seeds, st.sampled_from([2, 3]))
def test_generator_matches_ito_drift(seed, d):
    model = random_model(seed, d)
    gen = derive_generator(model)
    rho = random_density(d, np.random.default_rng(seed + 1))
    assert np.linalg.norm(gen(rho) - ito_drift(model, rho)) <= 1e-12
    assert abs(np.trace(gen(rho))) <= 1e-12


@given(seeds)
def test_one_step_scheme_mean_is_second_order(seed):
    model = random_model(seed)
    gen = derive_generator(model)
    rho = random_density(2, np.random.default_rng(seed + 7))
    v = rho.reshape(-1)
    res = []
    for dt in (4e-3, 2e-3, 1e-3):
        step = (scheme_superoperator(model, dt) @ v).reshape(2, 2)
        res.append(np.linalg.norm(step - (rho + dt * gen(rho))))
    # halving dt divides the residual by about four
    assert res[1] / res[0] < 0.3 and res[2] / res[1] < 0.3


def test_superoperator_matches_action():
    rng = np.random.default_rng(3)
    gen = derive_generator(random_model(5, 3))
    rho = random_density(3, rng)
    assert np.linalg.norm((gen.superoperator() @ rho.reshape(-1)).reshape(3, 3) - gen(rho)) <= 1e-12


def test_generator_rejects_bad_input():
    with pytest.raises(ValueError):
        LindbladGenerator(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        LindbladGenerator(np.zeros((2, 2)), ((SM, -1.0),))


def test_zero_generator_is_constant():
    gen = LindbladGenerator(np.zeros((2, 2)))
    rho = random_density(2, np.random.default_rng(4))
    out = evolve(gen, rho, TimeGrid(20, 0.1))
    assert np.all(out == rho)
    assert semigroup_check(gen, rho, TimeGrid(20, 0.1), 7) == 0.0


def test_amplitude_damping_analytic():
    gamma, dt = 1.0, 1e-3
    grid = TimeGrid(3000, dt)
    out = evolve(damping(gamma), projector(ket(1)), grid)
    assert np.abs(out[:, 1, 1].real - np.exp(-gamma * grid.times)).max() <= 1e-6


def test_dephasing_analytic():
    gamma, dt = 0.5, 1e-3
    grid = TimeGrid(2000, dt)
    gen = LindbladGenerator(np.zeros((2, 2)), ((math.sqrt(gamma) * SZ, 1.0),))
    out = evolve(gen, projector(plus()), grid)
    assert np.abs(out[:, 0, 1] - 0.5 * np.exp(-2 * gamma * grid.times)).max() <= 1e-6


def test_evolution_invariants():
    gen = derive_generator(random_model(11))
    grid = TimeGrid(400, 0.005)
    out = evolve(gen, random_density(2, np.random.default_rng(0)), grid)
    for rho in out:
        assert abs(np.trace(rho) - 1) <= 1e-9
        assert np.linalg.norm(rho - rho.conj().T) <= 1e-9
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= -1e-7


def test_step_size_guard():
    with pytest.raises(StepSizeError):
        evolve(damping(100.0), projector(ket(1)), TimeGrid(10, 0.1))
    # refinement brings the same grid back into range
    evolve(damping(100.0), projector(ket(1)), TimeGrid(10, 0.1), refine=100)


@pytest.mark.parametrize("split", [0, 1, 37, 100])
def test_semigroup_damping(split):
    grid = TimeGrid(100, 0.01)
    assert semigroup_check(damping(1.3), projector(plus()), grid, split) <= 1e-10


def test_rk4_against_matrix_exponential():
    gen = LindbladGenerator(0.7 * SX, ((SM, 0.9), (0.4 * SZ, 1.0)))
    grid = TimeGrid(200, 0.01)
    rho0 = random_density(2, np.random.default_rng(6))
    rk = evolve(gen, rho0, grid)
    ex = exact_evolve(gen, rho0, grid.times)
    assert np.abs(rk - ex).max() <= 1e-8


@given(seeds, st.floats(0.05, 3.0))
def test_choi_matrix_positive(seed, t):
    gen = derive_generator(random_model(seed))
    assert choi_min_eigenvalue(gen, t) >= -1e-8
