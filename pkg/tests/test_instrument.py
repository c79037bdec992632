from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import damping_kraus, random_qsr
from qsrsim.instrument import (
    NullEventError,
    QSRep,
    apply_instrument,
    channel_posterior_prob,
    check_cross_measures,
    dual_instrument,
    duality_check,
    instrument,
    measure,
    pov,
    unconditional_state,
    validate_qsr,
    von_neumann_qsr,
)
from qsrsim.linalg import SX, SZ, ket, minus, plus, projector, random_density, random_hermitian, random_unitary

seeds = st.integers(0, 2**32 - 1)
RT2 = math.sqrt(2)


def projective_z() -> QSRep:
    return QSRep.simple((0, 1), [0.5, 0.5], [RT2 * np.diag([1, 0]), RT2 * np.diag([0, 1])])


def test_validate_projective_passes():
    rep = validate_qsr(projective_z())
    assert rep.passed, rep.to_dict()


def test_validate_broken_input_law():
    q = QSRep.simple((0, 1), [1.0, 0.0], projective_z().ops[0])
    rep = validate_qsr(q)
    assert not rep.passed
    assert [c.name for c in rep.failed()] == ["operator_normalization"]
    # ||2|0><0| - I||_F = sqrt(2)
    assert abs(rep["operator_normalization"].residual - RT2) < 1e-12


def test_validate_two_channel_mixture():
    x_basis = QSRep.simple((0, 1), [0.5, 0.5], [RT2 * projector(plus()), RT2 * projector(minus())])
    q = QSRep.mixture([projective_z(), x_basis], [0.3, 0.7])
    assert q.n_channels == 2
    assert validate_qsr(q).passed
    # direct sum of the weighted POV contributions
    total = sum(a * sum(n * v.conj().T @ v for n, v in zip(nu, ops)) for a, nu, ops in zip(q.alpha, q.nu, q.ops))
    assert np.linalg.norm(total - np.eye(2)) < 1e-12


def test_validate_flags_bad_weights():
    q = QSRep.mixture([projective_z(), projective_z()], [0.5, 0.6])
    assert "weights_sum" in [c.name for c in validate_qsr(q).failed()]
    q = QSRep.mixture([projective_z(), projective_z()], [1.0, 0.0])
    assert "weights_positive" in [c.name for c in validate_qsr(q).failed()]


def test_apply_instrument_projective():
    q = von_neumann_qsr(SZ)
    prob, post = apply_instrument(q, projector(plus()), {1.0})
    assert abs(prob - 0.5) < 1e-12
    assert np.linalg.norm(post - projector(ket(0))) < 1e-12


def test_apply_instrument_full_event_has_probability_one(rng):
    q = random_qsr(3, 4, 2, rng)
    prob, post = apply_instrument(q, random_density(3, rng), None)
    assert abs(prob - 1.0) < 1e-12
    assert abs(np.trace(post) - 1.0) < 1e-12


def test_apply_instrument_amplitude_damping():
    q = QSRep.from_kraus(damping_kraus(0.25))
    prob, post = apply_instrument(q, projector(ket(1)), {1})
    assert abs(prob - 0.25) < 1e-12
    assert np.linalg.norm(post - projector(ket(0))) < 1e-12


def test_null_event_raises():
    q = von_neumann_qsr(SZ)
    with pytest.raises(NullEventError):
        apply_instrument(q, projector(ket(0)), {-1.0})
    with pytest.raises(NullEventError):
        apply_instrument(q, projector(ket(0)), set())


def test_duality_examples(rng):
    q = random_qsr(2, 3, 2, rng)
    rho0 = random_density(2, rng)
    assert duality_check(q, rho0, np.eye(2), {0, 2}) <= 1e-12
    assert abs(np.trace(instrument(q, {0, 2}, rho0)) - np.trace(rho0 @ pov(q, {0, 2}))) <= 1e-12
    assert np.linalg.norm(instrument(q, set(), rho0)) == 0.0
    assert np.linalg.norm(dual_instrument(q, set(), np.eye(2))) == 0.0


def test_channel_posterior_examples():
    assert np.allclose(channel_posterior_prob(projective_z(), plus(), 0), [1.0])
    twin = QSRep.mixture([projective_z(), projective_z()], [0.5, 0.5])
    assert np.allclose(channel_posterior_prob(twin, plus(), 0), [0.5, 0.5])

    # nu_1(0)||V_1(0)|0>||^2 = 0.5 * 0.4 = 0.2 and nu_2(0)||V_2(0)|0>||^2 = 0.5 * 0.2 = 0.1
    def chan(a2):
        return QSRep.simple((0, 1), [0.5, 0.5], [np.diag([math.sqrt(a2), 1]), np.diag([math.sqrt(2 - a2), 1])])

    q = QSRep.mixture([chan(0.4), chan(0.2)], [0.3, 0.7])
    assert validate_qsr(q).passed
    theta = channel_posterior_prob(q, ket(0), 0)
    assert np.allclose(theta, [0.06 / 0.13, 0.07 / 0.13], atol=1e-14)


def test_von_neumann_examples():
    res = measure(von_neumann_qsr(SZ), projector(plus()))
    assert np.allclose(res.output_law, [0.5, 0.5], atol=1e-12)
    assert np.linalg.norm(res.posterior_family[1.0] - projector(ket(0))) <= 1e-12
    assert np.linalg.norm(res.posterior_family[-1.0] - projector(ket(1))) <= 1e-12

    rho0 = random_density(2, np.random.default_rng(3))
    q = von_neumann_qsr(np.eye(2))
    assert q.outcomes == (1.0,)
    prob, post = apply_instrument(q, rho0, None)
    assert abs(prob - 1) < 1e-12 and np.linalg.norm(post - rho0) < 1e-12

    res = measure(von_neumann_qsr(SX), projector(ket(0)))
    assert np.allclose(res.output_law, [0.5, 0.5], atol=1e-12)
    assert np.linalg.norm(res.posterior_family[1.0] - projector(plus())) <= 1e-12
    assert np.linalg.norm(res.posterior_family[-1.0] - projector(minus())) <= 1e-12


def test_von_neumann_rejects_non_hermitian():
    with pytest.raises(ValueError):
        von_neumann_qsr(np.array([[0, 1], [0, 0]]))


def test_unconditional_state_examples():
    assert np.linalg.norm(unconditional_state(projective_z(), projector(plus())) - np.eye(2) / 2) < 1e-12
    rho0 = random_density(2, np.random.default_rng(5))
    trivial = QSRep.simple(("only",), [1.0], [np.eye(2)])
    assert np.linalg.norm(unconditional_state(trivial, rho0) - rho0) < 1e-15
    full = QSRep.from_kraus(damping_kraus(1.0))
    assert np.linalg.norm(unconditional_state(full, projector(ket(1))) - projector(ket(0))) < 1e-12


def test_cross_measure_check_accepts_orthogonal_channels(rng):
    q = random_qsr(2, 3, 2, rng)
    ref = np.full(3, 1 / 3)
    dens = np.zeros((2, 2, 3), dtype=complex)
    for i in range(2):
        dens[i, i] = q.nu[i] / ref
    rep = check_cross_measures(q, dens, ref)
    # the off-diagonal operator relation fails for generic channels; the diagonal ones hold
    assert rep["scalar_orthonormality"].passed
    assert rep["diagonal_matches_nu"].passed


def test_json_round_trip(rng):
    q = random_qsr(2, 3, 2, rng)
    back = QSRep.from_dict(q.to_dict())
    assert back.outcomes == q.outcomes
    assert np.array_equal(back.ops, q.ops) and np.array_equal(back.nu, q.nu)


def test_qsrep_is_read_only():
    q = projective_z()
    with pytest.raises(ValueError):
        q.ops[0, 0, 0, 0] = 3


# -- properties ---------------------------------------------------------------------

qsr_shapes = st.tuples(seeds, st.sampled_from([2, 3]), st.integers(1, 4), st.integers(1, 3))


@given(qsr_shapes)
def test_pov_completeness(shape):
    seed, d, n_out, n_ch = shape
    q = random_qsr(d, n_out, n_ch, np.random.default_rng(seed))
    assert np.linalg.norm(pov(q) - np.eye(d)) <= 1e-10
    assert validate_qsr(q).passed


@given(qsr_shapes, st.data())
def test_additivity(shape, data):
    seed, d, n_out, n_ch = shape
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, n_ch, rng)
    rho0 = random_density(d, rng)
    b1 = set(data.draw(st.sets(st.sampled_from(range(n_out)))))
    b2 = set(range(n_out)) - b1
    law = measure(q, rho0).output_law
    p1 = np.trace(instrument(q, b1, rho0)).real
    p2 = np.trace(instrument(q, b2, rho0)).real
    assert abs(p1 + p2 - 1.0) <= 1e-12
    assert abs(p1 - law[sorted(b1)].sum()) <= 1e-12


@given(qsr_shapes)
def test_posterior_density(shape):
    seed, d, n_out, n_ch = shape
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, n_ch, rng)
    rho0 = random_density(d, rng)
    res = measure(q, rho0)
    for k, w in enumerate(q.outcomes):
        if res.output_law[k] <= 0:
            continue
        direct = sum(q.alpha[i] * q.nu[i, k] * q.ops[i, k] @ rho0 @ q.ops[i, k].conj().T for i in range(n_ch))
        assert np.linalg.norm(res.posterior_family[w] * res.output_law[k] - direct) <= 1e-12


@given(qsr_shapes, st.floats(0.0, 1.0))
def test_affine_in_the_input(shape, lam):
    seed, d, n_out, n_ch = shape
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, n_ch, rng)
    r1, r2 = random_density(d, rng), random_density(d, rng)
    mix = lam * r1 + (1 - lam) * r2
    B = {0}
    p1, s1 = apply_instrument(q, r1, B)
    p2, s2 = apply_instrument(q, r2, B)
    p, s = apply_instrument(q, mix, B)
    assert abs(p - (lam * p1 + (1 - lam) * p2)) <= 1e-12
    assert np.linalg.norm(p * s - (lam * p1 * s1 + (1 - lam) * p2 * s2)) <= 1e-12


@given(seeds, st.sampled_from([2, 3]), st.integers(1, 4))
def test_simple_qsr_keeps_pure_states_pure(seed, d, n_out):
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, 1, rng)
    psi = random_density(d, rng, rank=1)
    for w, post in measure(q, psi).posterior_family.items():
        assert abs(np.trace(post @ post).real - 1.0) <= 1e-10


@given(qsr_shapes)
def test_unitary_covariance(shape):
    seed, d, n_out, n_ch = shape
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, n_ch, rng)
    U = random_unitary(d, rng)
    qU = QSRep(q.outcomes, q.alpha, q.nu, q.ops @ U)
    rho0 = random_density(d, rng)
    a = measure(qU, rho0)
    b = measure(q, U @ rho0 @ U.conj().T)
    assert np.abs(a.output_law - b.output_law).max() <= 1e-12
    for w in a.posterior_family:
        assert np.linalg.norm(a.posterior_family[w] - b.posterior_family[w]) <= 1e-12


@given(qsr_shapes)
def test_duality_random(shape):
    seed, d, n_out, n_ch = shape
    rng = np.random.default_rng(seed)
    q = random_qsr(d, n_out, n_ch, rng)
    kappa = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    Y = random_hermitian(d, rng)
    B = set(rng.choice(n_out, size=rng.integers(0, n_out + 1), replace=False).tolist())
    assert duality_check(q, kappa, Y, B) <= 1e-10
