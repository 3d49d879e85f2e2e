import numpy as np
import pytest

from dualcv import (
    ModelSpec,
    Payoff,
    StreamKey,
    euler_step,
    payoff_eval,
    resample_substep,
    resample_substep_block,
    simulate_paths,
)
from dualcv.errors import ConfigError, NumericalError

from conftest import RHO_5D, gauss_hermite_expectation, make_model_2d, make_model_5d


def make_model_1d(sigma=0.2, rate=0.0, dividend=0.02, spot=100.0, horizon=1.0,
                  n_dates=20):
    return ModelSpec(dim=1, rate=rate, dividends=dividend, sigmas=sigma,
                     rho=np.eye(1), spot=spot, horizon=horizon, n_dates=n_dates)


class TestModelSpec:
    def test_dt_is_derived(self):
        spec = make_model_2d(horizon=1.0, n_dates=20)
        assert spec.dt * spec.n_dates == spec.horizon

    def test_correlation_factor_reproduces_rho(self):
        spec = make_model_5d()
        prod = spec.corr_factor @ spec.corr_factor.T
        assert np.max(np.abs(prod - RHO_5D)) < 1e-12
        assert np.max(np.abs(np.diag(prod) - 1.0)) < 1e-12

    def test_non_psd_rho_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ConfigError):
            make_model_2d(rho=bad)

    def test_asymmetric_rho_rejected(self):
        bad = np.array([[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(ConfigError):
            make_model_2d(rho=bad)

    def test_scalar_parameters_broadcast(self):
        spec = make_model_5d()
        assert spec.dividends.shape == (5,)
        assert np.all(spec.spot == 100.0)


class TestEulerStep:
    def test_zero_drift_zero_innovation_keeps_state(self):
        spec = make_model_1d(rate=0.02, dividend=0.02, sigma=0.3)
        x = np.array([87.5])
        assert euler_step(spec, x, np.zeros(1), 1)[0] == x[0]

    def test_single_step_arithmetic(self):
        # x * (1 + (r - delta) dt) + sigma * x * sqrt(dt) * xi
        spec = make_model_1d(sigma=0.2, rate=0.0, dividend=0.02, horizon=1.0,
                             n_dates=20)
        got = euler_step(spec, np.array([100.0]), np.array([1.0]), 1)[0]
        expected = 100.0 * (1.0 - 0.02 * 0.05) + 0.2 * 100.0 * np.sqrt(0.05)
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(104.37214, abs=1e-5)

    def test_independent_coordinates_match_univariate_steps(self):
        spec2 = make_model_2d()
        spec1 = make_model_1d()
        xi = np.array([0.7, -1.3])
        x = np.array([95.0, 108.0])
        got = euler_step(spec2, x, xi, 3)
        for i in range(2):
            uni = euler_step(spec1, x[i:i + 1], xi[i:i + 1], 3)[0]
            assert got[i] == pytest.approx(uni, rel=1e-15)

    def test_no_clamping_for_negative_states(self):
        spec = make_model_1d(sigma=5.0)
        got = euler_step(spec, np.array([100.0]), np.array([-4.0]), 1)
        assert got[0] < 0.0


class TestPayoff:
    def test_at_the_money(self):
        assert payoff_eval(Payoff(100.0), np.array([100.0, 100.0])) == 0.0

    def test_in_the_money(self):
        assert payoff_eval(Payoff(100.0), np.array([90.0, 110.0])) == 10.0

    def test_out_of_the_money_with_negative_coordinate(self):
        assert payoff_eval(Payoff(100.0), np.array([-5.0, 50.0])) == 0.0

    def test_batched(self):
        x = np.array([[[90.0, 110.0], [100.0, 100.0]]])
        assert payoff_eval(Payoff(100.0), x).tolist() == [[10.0, 0.0]]


class TestSimulatePaths:
    def test_zero_volatility_is_deterministic(self):
        spec = make_model_1d(sigma=0.0, rate=0.01, dividend=0.03, n_dates=5)
        batch = simulate_paths(spec, Payoff(100.0), 3, StreamKey(seed=1))
        factor = 1.0 + (0.01 - 0.03) * spec.dt
        expected = 100.0 * factor ** np.arange(6)
        assert np.max(np.abs(batch.states[:, :, 0] - expected)) < 1e-12

    def test_same_key_bit_identical(self, model2d, payoff100):
        key = StreamKey(seed=42, purpose="training")
        a = simulate_paths(model2d, payoff100, 50, key)
        b = simulate_paths(model2d, payoff100, 50, key)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.innovations, b.innovations)

    def test_replay_reproduces_states_bit_exactly(self, model2d, payoff100):
        batch = simulate_paths(model2d, payoff100, 200, StreamKey(seed=3))
        assert np.array_equal(batch.replay_states(model2d), batch.states)

    def test_terminal_mean_matches_closed_form(self, model2d, payoff100):
        # E[X_J] = x0 * (1 + (r - delta) dt)^J for the explicit chain
        n = 100_000
        batch = simulate_paths(model2d, payoff100, n, StreamKey(seed=11))
        terminal = batch.states[:, -1, 0]
        exact = 100.0 * (1.0 - 0.02 * 0.05) ** 20
        se = terminal.std(ddof=1) / np.sqrt(n)
        assert abs(terminal.mean() - exact) < 3 * se

    def test_martingale_when_drift_vanishes(self):
        spec = make_model_1d(rate=0.0, dividend=0.0, sigma=0.2, n_dates=10)
        batch = simulate_paths(spec, Payoff(100.0), 50_000, StreamKey(seed=13))
        terminal = batch.states[:, -1, 0]
        se = terminal.std(ddof=1) / np.sqrt(terminal.size)
        assert abs(terminal.mean() - 100.0) < 3 * se

    def test_independent_coordinates_uncorrelated(self, model2d, payoff100):
        n = 100_000
        batch = simulate_paths(model2d, payoff100, n, StreamKey(seed=29))
        logs = np.log(batch.states[:, -1, :])
        corr = np.corrcoef(logs[:, 0], logs[:, 1])[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(n)

    def test_blow_up_aborts_with_diagnostic(self):
        spec = make_model_1d(rate=1e300, dividend=0.0, sigma=0.0, n_dates=3)
        with pytest.raises(NumericalError, match="date"):
            simulate_paths(spec, Payoff(100.0), 2, StreamKey(seed=1))

    def test_rejects_zero_paths(self, model2d, payoff100):
        with pytest.raises(ConfigError):
            simulate_paths(model2d, payoff100, 0, StreamKey(seed=1))


def test_rotated_innovation_correlations_match_rho():
    spec = make_model_5d()
    n = 1_000_000
    xi = spec.innovations(StreamKey(seed=8, purpose="training", date=1), (n, 5))
    rotated = xi @ spec.corr_factor.T
    corr = np.corrcoef(rotated, rowvar=False)
    for i in range(5):
        for k in range(i + 1, 5):
            rho = RHO_5D[i, k]
            se = (1.0 - rho * rho) / np.sqrt(n)
            assert abs(corr[i, k] - rho) < 3 * se + 1e-6


class TestResample:
    def test_zero_volatility_single_successor(self):
        spec = make_model_1d(sigma=0.0, rate=0.02, dividend=0.0, n_dates=4)
        sub, xi = resample_substep(spec, np.array([100.0]), 2, 1, StreamKey(seed=5))
        assert sub.shape == (1, 1) and xi.shape == (1, 1)
        assert sub[0, 0] == pytest.approx(100.0 * (1.0 + 0.02 * 0.25), rel=1e-15)

    def test_replay_bit_exact(self, model2d):
        x_prev = np.array([102.0, 97.0])
        sub, xi = resample_substep(model2d, x_prev, 4, 500, StreamKey(seed=6, path=3))
        assert np.array_equal(euler_step(model2d, x_prev, xi, 4), sub)

    def test_block_equals_per_path_concatenation(self, model2d):
        key = StreamKey(seed=21)
        x_prev = 100.0 + np.arange(10, dtype=float).reshape(5, 2)
        block_states, block_xi = resample_substep_block(model2d, x_prev, 3, 7, key,
                                                        first_path=2)
        for i in range(5):
            sub, xi = resample_substep(model2d, x_prev[i], 3, 7,
                                       key.with_(path=2 + i))
            assert np.array_equal(block_states[i], sub)
            assert np.array_equal(block_xi[i], xi)

    def test_mean_matches_quadrature_oracle(self):
        # one-step conditional expectation against 64-point quadrature
        spec = make_model_1d(sigma=0.02, rate=0.0, dividend=0.02, horizon=1.0,
                             n_dates=20)
        x0 = np.array([100.0])
        a = 100.0 * (1.0 + spec.drift[0])
        b = spec.vol_coef[0] * 100.0

        quad_sq = gauss_hermite_expectation(lambda z: (a + b * z) ** 2)
        sub, _ = resample_substep(spec, x0, 1, 1_000_000, StreamKey(seed=31))
        mc_sq = float(np.mean(sub[:, 0] ** 2))
        assert abs(mc_sq - quad_sq) < 1e-4 * abs(quad_sq)

        spec_small = make_model_1d(sigma=0.002, rate=0.0, dividend=0.02,
                                   horizon=1.0, n_dates=20)
        quad_lin = gauss_hermite_expectation(
            lambda z: 100.0 * (1.0 + spec_small.drift[0]) + spec_small.vol_coef[0] * 100.0 * z
        )
        sub, _ = resample_substep(spec_small, x0, 1, 1_000_000, StreamKey(seed=31))
        mc_lin = float(np.mean(sub[:, 0]))
        assert abs(mc_lin - quad_lin) < 1e-4
