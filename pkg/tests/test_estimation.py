import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import cho_factor, cho_solve

from evfdia.estimation import (
    MeasurementModel, MeasurementVector, NoiseConfig, SensorSpace, StateVector, bdd_check,
    build_measurement_model, residual, sample_noise, wls_estimate,
)
from evfdia.evcs import CapacityCoefficients
from evfdia.regulation import capacity_row

seeds = st.integers(0, 2**31)


def random_phi(rng, m):
    return rng.random(m.n_sensors) < 0.7


def state_z(m, rng):
    x = rng.standard_normal(m.H.shape[1]) * 0.01
    return x, m.h0 + m.H @ x


def test_identity_toy_model():
    m = MeasurementModel(H=np.eye(3), h0=np.zeros(3), sigma_real=np.ones(3), sigma_pseudo=np.ones(3),
                         n_pmu=1, n_evcs=1, eps=1.0, tau=0.05, row_sensor=np.array([0, 0, 1]))
    np.testing.assert_allclose(m.omega(), np.eye(3))


def test_model_shape(model33, feeder33):
    U, E, n = len(feeder33.pmu_buses), len(feeder33.evcs_buses), feeder33.n_bus - 1
    assert model33.H.shape == (2 * U + E + 2 * n + E, 2 * n + 2 * E)
    assert model33.dof == 2 * U
    assert model33.eps > 0
    assert np.linalg.matrix_rank(model33.H) == model33.H.shape[1]


@given(seed=seeds)
def test_omega_left_inverse(model33, seed):
    phi = random_phi(np.random.default_rng(seed), model33)
    Om = model33.omega(phi)
    np.testing.assert_allclose(Om @ model33.H, np.eye(model33.H.shape[1]), atol=1e-8)


@given(seed=seeds)
def test_exact_measurements_recover_state(model33, seed):
    rng = np.random.default_rng(seed)
    x, z = state_z(model33, rng)
    np.testing.assert_allclose(wls_estimate(model33, z, random_phi(rng, model33)), x, atol=1e-8)
    ok, r, norm = bdd_check(model33, z)
    assert ok and norm < 1e-6


@given(seed=seeds)
def test_weighted_orthogonal_error_is_ignored(model33, seed):
    rng = np.random.default_rng(seed)
    phi = random_phi(rng, model33)
    x, z = state_z(model33, rng)
    # a residual is W-orthogonal to range(H) by construction
    e = residual(model33, model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma(phi), phi)
    np.testing.assert_allclose(wls_estimate(model33, z + e, phi), x, atol=1e-8)


def test_matches_normal_equations(model33):
    rng = np.random.default_rng(4)
    phi = random_phi(rng, model33)
    z = model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma(phi)
    w = model33.sigma(phi) ** -2
    HtW = model33.H.T * w
    ref = cho_solve(cho_factor(HtW @ model33.H), HtW @ (z - model33.h0))
    np.testing.assert_allclose(wls_estimate(model33, z, phi), ref, rtol=1e-6, atol=1e-9)


@given(seed=seeds)
def test_residual_orthogonality_and_idempotence(model33, seed):
    rng = np.random.default_rng(seed)
    phi = random_phi(rng, model33)
    z = model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma(phi)
    r = residual(model33, z, phi)
    g = model33.H.T @ (model33.weights(phi) * r)
    scale = np.abs(model33.H.T * model33.weights(phi)).sum(axis=1) * np.abs(r).max()
    assert np.all(np.abs(g) <= 1e-8 * np.maximum(scale, 1.0))
    Om = model33.omega(phi)
    np.testing.assert_allclose(Om @ model33.H @ Om, Om, atol=1e-8 * np.abs(Om).max())


def test_uniform_weight_scaling_leaves_estimate(model33):
    rng = np.random.default_rng(5)
    z = model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma_real
    scaled = dataclasses.replace(model33, sigma_real=model33.sigma_real * np.sqrt(2),
                                 sigma_pseudo=model33.sigma_pseudo * np.sqrt(2))
    np.testing.assert_allclose(wls_estimate(scaled, z), wls_estimate(model33, z), atol=1e-10)


@given(seed=seeds)
def test_range_space_attack_is_invisible(model33, seed):
    rng = np.random.default_rng(seed)
    phi = random_phi(rng, model33)
    z = model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma(phi)
    a = model33.H @ rng.standard_normal(model33.H.shape[1])
    _, r0, n0 = bdd_check(model33, z, phi)
    _, r1, n1 = bdd_check(model33, z + a, phi)
    np.testing.assert_allclose(r1, r0, atol=1e-8)
    assert n1 == pytest.approx(n0, abs=1e-6)


def test_noise_only_pass_rate(model33):
    rng = np.random.default_rng(6)
    trials = 10_000
    passed = 0
    for e in sample_noise(model33, rng, size=trials):
        passed += bdd_check(model33, model33.h0 + e)[0]
    assert abs(passed / trials - (1 - model33.tau)) <= 0.01


def test_large_single_error_detected(model33):
    z = model33.h0.copy()
    W = model33.weights()
    P = np.eye(len(z)) - model33.H @ model33.omega()
    # the PMU row whose own error shows most in the weighted residual
    sens = np.linalg.norm(np.sqrt(W)[:, None] * P, axis=0) * model33.sigma_real
    i = int(np.argmax(sens[:2 * model33.n_pmu]))
    assert 50 * sens[i] > 2 * model33.eps  # direct residual computation
    z[i] += 50 * model33.sigma_real[i]
    ok, r, norm = bdd_check(model33, z)
    assert not ok
    assert norm == pytest.approx(50 * sens[i], rel=1e-6)


def test_count_rows_are_critical(model33):
    # station counts are not redundant: their errors never reach the residual
    z = model33.h0.copy()
    z[2 * model33.n_pmu] += 50.0
    ok, r, norm = bdd_check(model33, z)
    assert ok and norm < 1e-6


def test_dimension_mismatch(model33):
    with pytest.raises(ValueError, match="does not match"):
        wls_estimate(model33, np.zeros(3))


def test_zero_idle_coefficients_rejected(feeder33, lin33):
    zero = CapacityCoefficients(0.0, 0.0, 0.0, 5.0)
    with pytest.raises(ValueError, match="idle"):
        build_measurement_model(feeder33, lin33, [zero, zero], [10.0, 10.0])


def test_noise_config_validation():
    with pytest.raises(ValueError, match="tau"):
        NoiseConfig(tau=1.5)
    with pytest.raises(ValueError, match="pmu_v_sigma"):
        NoiseConfig(pmu_v_sigma=0.0)


def test_measurement_vector_layout(model33):
    U, E = model33.n_pmu, model33.n_evcs
    n = (model33.H.shape[0] - 2 * U - 2 * E) // 2
    mv = MeasurementVector(np.ones(U), np.zeros(U), np.full(E, 3.0), np.zeros(n), np.zeros(n))
    assert mv.provenance.all() and len(mv.provenance) == U + E
    z = mv.stack()
    assert z.shape == (model33.H.shape[0],)
    np.testing.assert_array_equal(z[2 * U:2 * U + E], 3.0)
    y = np.arange(2 * U + E, dtype=float)
    mv2 = mv.with_sensors(y, provenance=np.zeros(U + E))
    np.testing.assert_array_equal(mv2.sensors, y)
    assert not mv2.provenance.any()
    # provenance travels with the vector into the estimator
    x1 = wls_estimate(model33, mv2)
    x2 = wls_estimate(model33, mv2.stack(), np.zeros(U + E, bool))
    np.testing.assert_allclose(x1, x2)


def test_state_vector_round_trip():
    x = np.arange(10.0)
    sv = StateVector.unstack(x, n_bus=4, n_evcs=2)
    np.testing.assert_array_equal(sv.p, [0, 1, 2])
    np.testing.assert_array_equal(sv.p_up, [8, 9])
    np.testing.assert_array_equal(sv.stack(), x)


def test_sensor_space_matches_dense(model33, feeder33, lin33):
    rng = np.random.default_rng(8)
    k = model33.n_sensor_rows
    outcomes = (rng.random((12, model33.n_sensors)) < 0.6).astype(np.int8)
    outcomes[0] = 1
    outcomes[1] = 0
    V = capacity_row(feeder33, lin33)
    sp = SensorSpace(model33, V, outcomes)
    z = model33.h0 + rng.standard_normal(model33.H.shape[0]) * model33.sigma_real * 3
    sc = sp.slot(z[k:] - model33.h0[k:])
    y = np.tile(z[:k] - model33.h0[:k], (len(outcomes), 1))
    J = sp.j_stat(sc, y)
    caps = sp.capacity(sc, y)
    for f, phi in enumerate(outcomes):
        x = wls_estimate(model33, z, phi)
        _, _, norm = bdd_check(model33, z, phi)
        assert J[f] == pytest.approx(norm**2, rel=1e-7, abs=1e-8)
        assert caps[f] == pytest.approx(V @ x, rel=1e-7, abs=1e-10)
        np.testing.assert_allclose(sp.estimate(sc, y[f], f), x, atol=1e-9)
