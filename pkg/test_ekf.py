"""
Tests for the EKF-based N-procedure: activation, predict, linearization, update and node tracking
"""

import numpy as np
import pytest

from dataseq import MatrixSequence, Observation
from ekf import (
    POSTERIOR,
    PRIOR,
    Activation,
    NoiseConfig,
    StateEstimate,
    activation_eval,
    check_covariance_health,
    linearize_observation,
    predict,
    run_n_procedure,
    update,
)
from errors import ConfigError, DimensionMismatch, NonFiniteState

IDENTITY = Activation("identity")
LEAKY = Activation("leaky_relu", 0.01)


def posterior(mean, cov):
    return StateEstimate(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), POSTERIOR)


def prior(mean, cov):
    return StateEstimate(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), PRIOR)


def away_from_kink(rng, size):
    x = rng.uniform(-2.0, 2.0, size=size)
    return np.where(np.abs(x) < 2e-3, np.sign(x) * 2e-3 + x, x)


class TestActivation:
    def test_positive(self):
        value, slope = activation_eval(LEAKY, 2.0)
        assert (value, slope) == (2.0, 1.0)

    def test_negative(self):
        value, slope = LEAKY.evaluate(-1.0)
        assert value == pytest.approx(-0.01)
        assert slope == 0.01

    def test_identity(self):
        x = np.array([-3.0, 0.0, 4.5])
        value, slope = IDENTITY.evaluate(x)
        assert np.array_equal(value, x)
        assert np.array_equal(slope, np.ones(3))

    def test_parse(self):
        assert Activation.parse("Leaky-ReLU", 0.2) == Activation("leaky_relu", 0.2)
        assert Activation.parse("identity").alpha == 1.0
        with pytest.raises(ConfigError):
            Activation.parse("tanh")


class TestPredict:
    def test_identity_adds_transition_noise(self):
        result, _ = predict(posterior([1.0, 2.0], np.eye(2)), IDENTITY, NoiseConfig(w_scale=0.1))
        assert result.flavor == PRIOR
        assert np.array_equal(result.mean, [1.0, 2.0])
        assert np.allclose(result.cov, 1.1 * np.eye(2), rtol=0, atol=1e-15)

    def test_leaky_scales_covariance(self):
        result, lin = predict(posterior([-1.0, 2.0], np.eye(2)), LEAKY, NoiseConfig(w_scale=0.0))
        assert np.allclose(result.mean, [-0.01, 2.0])
        assert np.allclose(result.cov, np.diag([1e-4, 1.0]), rtol=0, atol=1e-15)
        assert np.array_equal(lin.B, np.diag([0.01, 1.0]))

    def test_identity_keeps_covariance(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        result, _ = predict(posterior([0.5, -0.5], cov), IDENTITY, NoiseConfig(w_scale=0.0))
        assert np.array_equal(result.cov, cov)

    def test_non_finite_state(self):
        with pytest.raises(NonFiniteState):
            predict(posterior([np.nan], [[1.0]]), IDENTITY, NoiseConfig())


class TestLinearizeObservation:
    def test_linear_scalar(self):
        lin = linearize_observation(prior([3.0], [[1.0]]), [[1.0]], IDENTITY)
        assert lin.predicted.tolist() == [3.0]
        assert lin.D.tolist() == [[1.0]]
        assert lin.H.tolist() == [0.0]

    def test_leaky(self):
        lin = linearize_observation(prior([-2.0, 1.0], np.eye(2)), [[1.0, 1.0]], LEAKY)
        assert lin.predicted[0] == pytest.approx(0.98)
        assert np.allclose(lin.D, [[0.01, 1.0]])

    def test_zero_rows(self):
        lin = linearize_observation(prior([0.4, -0.7], np.eye(2)), np.zeros((3, 2)), LEAKY)
        assert not lin.D.any()
        assert not lin.predicted.any()

    def test_rank_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linearize_observation(prior([1.0, 1.0], np.eye(2)), [[1.0, 1.0, 1.0]], IDENTITY)


class TestUpdate:
    def test_scalar_product_of_gaussians(self):
        state = prior([1.0], [[1.0]])
        lin = linearize_observation(state, [[1.0]], IDENTITY)
        result = update(state, [3.0], lin, NoiseConfig(r_scale=1.0))
        assert result.flavor == POSTERIOR
        assert result.mean[0] == pytest.approx(2.0)
        assert result.cov[0, 0] == pytest.approx(0.5)

    def test_no_observations(self):
        state = prior([0.3, 0.1], [[1.0, 0.2], [0.2, 2.0]])
        lin = linearize_observation(state, np.zeros((0, 2)), LEAKY)
        result = update(state, np.zeros(0), lin, NoiseConfig())
        assert np.array_equal(result.mean, state.mean)
        assert np.array_equal(result.cov, state.cov)

    def test_exact_observation_limit(self):
        state = prior([0.0], [[1.0]])
        lin = linearize_observation(state, [[1.0]], IDENTITY)
        result = update(state, [5.0], lin, NoiseConfig(r_scale=0.0))
        assert result.mean[0] == pytest.approx(5.0)
        assert result.cov[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_observation_shape(self):
        state = prior([0.0], [[1.0]])
        lin = linearize_observation(state, [[1.0]], IDENTITY)
        with pytest.raises(DimensionMismatch):
            update(state, [1.0, 2.0], lin, NoiseConfig())


def gaussian_conditioning(mean, cov, h, y, w_var, r_var):
    """Textbook linear-Gaussian step in information form"""
    prior_cov = cov + w_var * np.eye(len(mean))
    info = np.linalg.inv(prior_cov) + h.T @ h / r_var
    post_cov = np.linalg.inv(info)
    post_mean = post_cov @ (np.linalg.solve(prior_cov, mean) + h.T @ y / r_var)
    return post_mean, post_cov


@pytest.mark.parametrize("rank", [1, 2])
def test_identity_activation_matches_linear_gaussian_posterior(rank):
    rng = np.random.default_rng(rank)
    noise = NoiseConfig(w_scale=0.1, r_scale=0.5)
    state = posterior(rng.normal(size=rank), np.eye(rank))
    oracle_mean, oracle_cov = state.mean, state.cov

    for _ in range(100):
        m = int(rng.integers(1, 4))
        h = rng.normal(size=(m, rank))
        y = rng.normal(size=m)

        predicted, _ = predict(state, IDENTITY, noise)
        state = update(predicted, y, linearize_observation(predicted, h, IDENTITY), noise)
        oracle_mean, oracle_cov = gaussian_conditioning(oracle_mean, oracle_cov, h, y, 0.1, 0.5)

        assert np.max(np.abs(state.mean - oracle_mean)) < 1e-10
        assert np.max(np.abs(state.cov - oracle_cov)) < 1e-10


def central_difference(func, x, step=1e-6):
    columns = []
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = step
        columns.append((func(x + e) - func(x - e)) / (2 * step))
    return np.stack(columns, axis=1)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(42)
    act = Activation("leaky_relu", 0.05)
    for _ in range(1000):
        rank = int(rng.integers(1, 4))
        x = away_from_kink(rng, rank)
        q_rows = rng.normal(size=(int(rng.integers(1, 4)), rank))

        _, lin = predict(posterior(x, np.eye(rank)), act, NoiseConfig())
        fd_b = central_difference(lambda v: act.evaluate(v)[0], x)
        assert np.allclose(lin.B, fd_b, rtol=1e-6, atol=1e-9)

        obs = linearize_observation(prior(x, np.eye(rank)), q_rows, act)
        fd_d = central_difference(lambda v: q_rows @ act.evaluate(v)[0], x)
        assert np.allclose(obs.D, fd_d, rtol=1e-6, atol=1e-9)


def test_affine_forms_are_exact_at_expansion_points():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.normal(size=3)
        predicted, lin = predict(posterior(x, np.eye(3)), LEAKY, NoiseConfig())
        assert np.allclose(lin.B @ x + lin.C, LEAKY.evaluate(x)[0], rtol=0, atol=1e-15)
        assert np.allclose(lin.C, 0.0, atol=1e-15)

        obs = linearize_observation(predicted, rng.normal(size=(2, 3)), LEAKY)
        assert np.allclose(obs.D @ predicted.mean + obs.H, obs.predicted, rtol=0, atol=1e-14)


class TestRunNProcedure:
    def test_pure_prediction_keeps_initial_means(self):
        seq = MatrixSequence(3, 1)
        init = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
        n = run_n_procedure(seq, np.ones((3, 2)), IDENTITY, NoiseConfig(w_scale=0.0), init)
        assert np.array_equal(n.slot(1), init)

    @pytest.mark.parametrize("rank", [2, 3])
    def test_fully_observed_linear_system(self, rank):
        rng = np.random.default_rng(rank)
        q = np.eye(rank) + 0.3 * rng.uniform(size=(rank, rank))
        truth = rng.normal(size=rank)
        entries = [Observation(1, 1, j + 1, float(q[j] @ truth)) for j in range(rank)]
        seq = MatrixSequence(rank, 1, entries)
        noise = NoiseConfig(w_scale=0.0, r_scale=1e-12)

        n = run_n_procedure(seq, q, IDENTITY, noise, np.zeros((rank, rank)))
        least_squares = np.linalg.lstsq(q, np.array([e.w for e in entries]), rcond=None)[0]
        assert np.allclose(n.row(1, 1), least_squares, rtol=0, atol=1e-4)

    def test_deterministic_across_workers(self):
        rng = np.random.default_rng(9)
        entries = {}
        for _ in range(60):
            t, i, j = (int(v) for v in rng.integers(1, [5, 9, 9]))
            entries[(t, i, j)] = Observation(t, i, j, float(rng.normal()))
        seq = MatrixSequence(8, 4, entries.values())
        q = rng.uniform(size=(8, 3))
        init = rng.uniform(size=(8, 3))

        serial = run_n_procedure(seq, q, LEAKY, NoiseConfig(), init)
        again = run_n_procedure(seq, q, LEAKY, NoiseConfig(), init)
        threaded = run_n_procedure(seq, q, LEAKY, NoiseConfig(), init, workers=4)
        assert np.array_equal(serial.slots, again.slots)
        assert np.array_equal(serial.slots, threaded.slots)
        assert np.array_equal(serial.final_cov, threaded.final_cov)

    def test_monitor_sees_healthy_covariances(self):
        seq = MatrixSequence(3, 4, [Observation(2, 1, 3, 0.5), Observation(3, 2, 1, -0.2)])
        seen = []

        def monitor(t, i, estimate):
            seen.append((t, i, estimate.flavor))
            assert check_covariance_health(estimate.cov)

        run_n_procedure(seq, np.full((3, 2), 0.05), LEAKY, NoiseConfig(), np.full((3, 2), 0.05), monitor=monitor)
        assert len(seen) == 2 * 3 * 4
        assert (1, 1, PRIOR) in seen and (4, 3, POSTERIOR) in seen

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            run_n_procedure(MatrixSequence(3, 1), np.ones((2, 2)), IDENTITY, NoiseConfig(), np.ones((3, 2)))
