import itertools
import math

import numpy as np
import pytest

from dualcv import (
    EstimatorConfig,
    ModelSpec,
    MultilevelSchedule,
    Payoff,
    StreamKey,
    estimate_dual_cv,
    estimate_dual_standard,
    estimate_eep,
    estimate_lower_bound,
    estimate_multilevel,
    fit_value_functions,
    payoff_eval,
    simulate_paths,
)
from dualcv.basis import HermiteSystem, StateBasis
from dualcv.errors import ConfigError
from dualcv.regress import CVModel, LinearModel, fit_cv_coefficients

from conftest import (
    FunctionValue,
    TwoAtomDynamics,
    constant_value,
    first_coordinate_value,
    make_model_2d,
    zero_value,
)


def combined_se(*estimates):
    return math.sqrt(sum(e.std_error ** 2 for e in estimates))


@pytest.fixture(scope="module")
def small_model():
    return ModelSpec(dim=2, rate=0.0, dividends=0.02, sigmas=0.2, rho=np.eye(2),
                     spot=100.0, horizon=1.0, n_dates=3)


@pytest.fixture(scope="module")
def small_vfun(small_model, payoff100):
    return fit_value_functions(small_model, payoff100, 8000, 2, StreamKey(seed=50))


class TestDualStandard:
    def test_zero_value_functions_degenerate(self, model2d, payoff100):
        # with v = 0 both martingale terms vanish: the estimate is exactly
        # the sample mean of the pathwise payoff maximum over dates 1..J
        cfg = EstimatorConfig(n_outer=400, n_inner=3)
        key = StreamKey(seed=60)
        est = estimate_dual_standard(model2d, payoff100, zero_value(), cfg, key)
        outer = simulate_paths(model2d, payoff100, 400, key.with_(purpose="outer"))
        g = payoff_eval(payoff100, outer.states)
        oracle = g[:, 1:].max(axis=1)
        assert np.array_equal(est.path_values, oracle)
        assert est.value == oracle.mean()

    def test_zero_payoff_gives_zero(self, model2d, vfun2d):
        dead = Payoff(strike=1e15)
        cfg = EstimatorConfig(n_outer=50, n_inner=4)
        est = estimate_dual_standard(model2d, dead, zero_value(), cfg,
                                     StreamKey(seed=61))
        assert est.value == 0.0

    def test_allow_exercise_at_0_includes_date_zero(self, model2d, vfun2d):
        rich = Payoff(strike=0.0)  # exercise at 0 pays the spot maximum
        cfg = EstimatorConfig(n_outer=60, n_inner=4, allow_exercise_at_0=True)
        est = estimate_dual_standard(model2d, rich, vfun2d, cfg, StreamKey(seed=62))
        assert np.all(est.path_values >= 100.0)

    def test_standard_error_matches_path_values(self, model2d, payoff100, vfun2d):
        cfg = EstimatorConfig(n_outer=300, n_inner=10)
        est = estimate_dual_standard(model2d, payoff100, vfun2d, cfg,
                                     StreamKey(seed=63))
        assert est.std_error == pytest.approx(
            est.path_values.std(ddof=1) / math.sqrt(300), rel=1e-12)

    def test_bias_decays_as_inner_samples_double(self, model2d, payoff100, vfun2d):
        # the upward nested bias shrinks with N_d: means must be monotone
        # non-increasing within one combined standard error
        key = StreamKey(seed=64)
        estimates = [
            estimate_dual_standard(model2d, payoff100, vfun2d,
                                   EstimatorConfig(n_outer=6000, n_inner=nd), key)
            for nd in (25, 50, 100, 200)
        ]
        for left, right in zip(estimates, estimates[1:]):
            assert right.value <= left.value + combined_se(left, right)


class TestEEP:
    def test_huge_value_functions_leave_terminal_payoff(self, model2d, payoff100):
        cfg = EstimatorConfig(n_outer=300, n_inner=2)
        key = StreamKey(seed=65)
        est = estimate_eep(model2d, payoff100, constant_value(1e12), cfg, key)
        outer = simulate_paths(model2d, payoff100, 300, key.with_(purpose="outer"))
        g_term = payoff_eval(payoff100, outer.states[:, -1])
        assert np.array_equal(est.path_values, g_term)

    def test_zero_payoff_gives_zero(self, model2d):
        dead = Payoff(strike=1e15)
        cfg = EstimatorConfig(n_outer=40, n_inner=2)
        est = estimate_eep(model2d, dead, zero_value(), cfg, StreamKey(seed=66))
        assert est.value == 0.0

    def test_two_atom_toy_matches_enumeration(self, payoff100):
        # J=1 additive walk with +-1 innovations: every sub-sample outcome
        # can be enumerated, giving the estimator's expectation in closed form
        toy = TwoAtomDynamics(spot=100.0, n_dates=1)
        payoff = Payoff(strike=99.5)
        vfun = FunctionValue(lambda x: np.maximum(x[..., 0] - 99.5, 0.0))
        g0 = 0.5

        def enum_expectation(n_inner):
            total = 0.0
            for outer in (-1.0, 1.0):
                g_term = max(100.0 + outer - 99.5, 0.0)
                for subs in itertools.product((-1.0, 1.0), repeat=n_inner):
                    z = np.mean([max(100.0 + s - 99.5, 0.0) for s in subs])
                    total += g_term + max(g0 - z, 0.0)
            return total / (2 ** (n_inner + 1))

        cfg = EstimatorConfig(n_outer=40_000, n_inner=2, allow_exercise_at_0=True)
        est = estimate_eep(toy, payoff, vfun, cfg, StreamKey(seed=67))
        expected = enum_expectation(2)
        assert expected == pytest.approx(0.875)
        assert abs(est.value - expected) < 3 * est.std_error

    def test_biased_high_against_own_reference(self, small_model, payoff100,
                                               small_vfun):
        coarse = [
            estimate_eep(small_model, payoff100, small_vfun,
                         EstimatorConfig(n_outer=400, n_inner=10),
                         StreamKey(seed=68, replication=r))
            for r in range(60)
        ]
        fine = estimate_eep(small_model, payoff100, small_vfun,
                            EstimatorConfig(n_outer=30_000, n_inner=1000),
                            StreamKey(seed=69))
        coarse_mean = np.mean([e.value for e in coarse])
        coarse_se = np.std([e.value for e in coarse], ddof=1) / math.sqrt(len(coarse))
        assert coarse_mean >= fine.value - 3 * math.hypot(coarse_se, fine.std_error)


class TestDualCV:
    def test_zero_blocks_bit_identical_to_standard(self, model2d, payoff100,
                                                   vfun2d):
        training = simulate_paths(model2d, payoff100, 2000,
                                  StreamKey(seed=70, purpose="training"))
        cv = fit_cv_coefficients(training, vfun2d, StateBasis(dim=2, degree=1),
                                 HermiteSystem(m=2), 1)
        key = StreamKey(seed=71)
        plain = estimate_dual_standard(model2d, payoff100, vfun2d,
                                       EstimatorConfig(n_outer=500, n_inner=40),
                                       key)
        coupled = estimate_dual_cv(model2d, payoff100, vfun2d, cv,
                                   EstimatorConfig(n_outer=500, n_inner=40,
                                                   cv_blocks=0), key)
        assert coupled.value == plain.value
        assert coupled.std_error == plain.std_error
        assert np.array_equal(coupled.path_values, plain.path_values)

    def test_perfect_cv_makes_inner_size_irrelevant(self):
        # drift (r - delta) dt = -1 makes each sub-state exactly 16 xi, and
        # the injected coefficient 0.125 x cancels it exactly: the inner
        # summand is deterministic, so any N_d gives identical output
        spec = ModelSpec(dim=1, rate=0.0, dividends=4.0, sigmas=0.25,
                         rho=np.eye(1), spot=128.0, horizon=0.25, n_dates=1)
        payoff = Payoff(strike=0.0)
        basis = StateBasis(dim=1, degree=1, include_payoff=False)
        lin = LinearModel(basis=basis, coef=np.array([0.0, 0.125]),
                          residual_rms=0.0, cond=1.0)
        cv = CVModel(basis=basis, system=HermiteSystem(m=1), n_blocks=1,
                     function_indices=(1,), models=((lin,),), truncation=1e18)
        vfun = first_coordinate_value()
        key = StreamKey(seed=72)
        one = estimate_dual_cv(spec, payoff, vfun, cv,
                               EstimatorConfig(n_outer=3000, n_inner=1), key)
        hundred = estimate_dual_cv(spec, payoff, vfun, cv,
                                   EstimatorConfig(n_outer=3000, n_inner=100), key)
        assert one.value == hundred.value
        assert one.std_error == hundred.std_error
        assert np.array_equal(one.path_values, hundred.path_values)

    def test_requesting_more_blocks_than_fitted_rejected(self, model2d,
                                                         payoff100, vfun2d):
        training = simulate_paths(model2d, payoff100, 500,
                                  StreamKey(seed=73, purpose="training"))
        cv = fit_cv_coefficients(training, vfun2d, StateBasis(dim=2, degree=1),
                                 HermiteSystem(m=2), 1)
        with pytest.raises(ConfigError):
            estimate_dual_cv(model2d, payoff100, vfun2d, cv,
                             EstimatorConfig(n_outer=10, n_inner=2, cv_blocks=2),
                             StreamKey(seed=74))

    def test_means_agree_with_standard(self, small_model, payoff100, small_vfun):
        # the martingale-transform control variate introduces no bias: with
        # generous inner sampling the two estimators' means coincide
        training = simulate_paths(small_model, payoff100, 4000,
                                  StreamKey(seed=75, purpose="training"))
        cv = fit_cv_coefficients(training, small_vfun,
                                 StateBasis(dim=2, degree=1),
                                 HermiteSystem(m=2), 1)
        cfg = EstimatorConfig(n_outer=150, n_inner=500)
        plain_vals, cv_vals = [], []
        for rep in range(100):
            plain_vals.append(estimate_dual_standard(
                small_model, payoff100, small_vfun, cfg,
                StreamKey(seed=76, replication=rep)).value)
            cv_vals.append(estimate_dual_cv(
                small_model, payoff100, small_vfun, cv, cfg,
                StreamKey(seed=77, replication=rep)).value)
        plain_mean = np.mean(plain_vals)
        cv_mean = np.mean(cv_vals)
        se = math.hypot(np.std(plain_vals, ddof=1) / 10.0,
                        np.std(cv_vals, ddof=1) / 10.0)
        assert abs(plain_mean - cv_mean) <= 3 * se

    def test_variance_reduction_shrinks_standard_error(self, model2d, payoff100,
                                                       vfun2d):
        training = simulate_paths(model2d, payoff100, 4000,
                                  StreamKey(seed=78, purpose="training"))
        cv = fit_cv_coefficients(training, vfun2d, StateBasis(dim=2, degree=1),
                                 HermiteSystem(m=2), 1)
        key = StreamKey(seed=79)
        cfg = EstimatorConfig(n_outer=800, n_inner=10)
        plain = estimate_dual_standard(model2d, payoff100, vfun2d, cfg, key)
        reduced = estimate_dual_cv(model2d, payoff100, vfun2d, cv, cfg, key)
        assert reduced.value < plain.value  # smaller upward bias
        assert reduced.std_error < plain.std_error


class TestMultilevel:
    def test_single_level_equals_standard(self, small_model, payoff100,
                                          small_vfun):
        key = StreamKey(seed=80)
        sched = MultilevelSchedule(n_outer_levels=(600,), n_inner_levels=(16,))
        ml = estimate_multilevel(small_model, payoff100, small_vfun,
                                 EstimatorConfig(n_outer=600, n_inner=16,
                                                 multilevel=sched), key)
        plain = estimate_dual_standard(small_model, payoff100, small_vfun,
                                       EstimatorConfig(n_outer=600, n_inner=16),
                                       key)
        assert ml.value == plain.value
        assert np.array_equal(ml.level_values[0], plain.path_values)

    def test_schedule_requires_4x_refinement(self):
        with pytest.raises(ConfigError, match="4x"):
            MultilevelSchedule(n_outer_levels=(100, 50),
                               n_inner_levels=(8, 24))

    def test_missing_schedule_rejected(self, small_model, payoff100, small_vfun):
        with pytest.raises(ConfigError):
            estimate_multilevel(small_model, payoff100, small_vfun,
                                EstimatorConfig(n_outer=10, n_inner=2),
                                StreamKey(seed=81))

    def test_telescoping_mean_matches_finest_standard(self, small_model,
                                                      payoff100, small_vfun):
        sched = MultilevelSchedule(n_outer_levels=(512, 256),
                                   n_inner_levels=(8, 32))
        ml_vals, fine_vals = [], []
        for rep in range(120):
            ml = estimate_multilevel(small_model, payoff100, small_vfun,
                                     EstimatorConfig(n_outer=512, n_inner=8,
                                                     multilevel=sched),
                                     StreamKey(seed=82, replication=rep))
            fine = estimate_dual_standard(small_model, payoff100, small_vfun,
                                          EstimatorConfig(n_outer=512, n_inner=32),
                                          StreamKey(seed=83, replication=rep))
            ml_vals.append(ml.value)
            fine_vals.append(fine.value)
        gap = np.mean(ml_vals) - np.mean(fine_vals)
        se = math.hypot(np.std(ml_vals, ddof=1), np.std(fine_vals, ddof=1)) / math.sqrt(120)
        assert abs(gap) <= 3 * se


class TestLowerBound:
    def test_zero_payoff_gives_zero(self, model2d, vfun2d):
        dead = Payoff(strike=1e15)
        est = estimate_lower_bound(model2d, dead, vfun2d, 100, StreamKey(seed=84))
        assert est.value == 0.0

    def test_single_date_is_terminal_mean(self, payoff100):
        model = ModelSpec(dim=1, rate=0.0, dividends=0.02, sigmas=0.2,
                          rho=np.eye(1), spot=100.0, horizon=1.0, n_dates=1)
        vfun = fit_value_functions(model, payoff100, 200, 1, StreamKey(seed=85))
        key = StreamKey(seed=86)
        est = estimate_lower_bound(model, payoff100, vfun, 5000, key)
        paths = simulate_paths(model, payoff100, 5000, key.with_(purpose="outer"))
        assert est.value == payoff_eval(payoff100, paths.states[:, 1]).mean()

    def test_upper_bounds_dominate_policy_value(self, model2d, payoff100, vfun2d):
        lower = estimate_lower_bound(model2d, payoff100, vfun2d, 40_000,
                                     StreamKey(seed=87))
        cfg = EstimatorConfig(n_outer=1500, n_inner=100)
        dual = estimate_dual_standard(model2d, payoff100, vfun2d, cfg,
                                      StreamKey(seed=88))
        eep = estimate_eep(model2d, payoff100, vfun2d, cfg, StreamKey(seed=89))
        for upper in (dual, eep):
            assert upper.value >= lower.value - 3 * combined_se(upper, lower)


class TestCostLedger:
    def test_standard_counts_exact(self, small_model, payoff100, small_vfun):
        n, nd, j = 123, 17, small_model.n_dates
        est = estimate_dual_standard(small_model, payoff100, small_vfun,
                                     EstimatorConfig(n_outer=n, n_inner=nd),
                                     StreamKey(seed=90))
        assert est.ledger.inner_sims == n * nd * j
        assert est.ledger.euler_steps == n * j + n * nd * j
        assert est.ledger.basis_evals == n * nd * j + n * j

    def test_cv_counts_exact(self, small_model, payoff100, small_vfun):
        training = simulate_paths(small_model, payoff100, 1000,
                                  StreamKey(seed=91, purpose="training"))
        cv = fit_cv_coefficients(training, small_vfun,
                                 StateBasis(dim=2, degree=1),
                                 HermiteSystem(m=2), 1)
        n, nd, j = 77, 13, small_model.n_dates
        est = estimate_dual_cv(small_model, payoff100, small_vfun, cv,
                               EstimatorConfig(n_outer=n, n_inner=nd),
                               StreamKey(seed=92))
        assert est.ledger.inner_sims == n * nd * j
        # one extra coefficient feature row per outer path and date
        assert est.ledger.basis_evals == n * nd * j + n * j + n * j

    def test_eep_counts_skip_unused_date(self, small_model, payoff100, small_vfun):
        n, nd, j = 50, 9, small_model.n_dates
        est = estimate_eep(small_model, payoff100, small_vfun,
                           EstimatorConfig(n_outer=n, n_inner=nd),
                           StreamKey(seed=93))
        # without exercise at date 0 the date-1 comparison drops out
        assert est.ledger.inner_sims == n * nd * (j - 1)
        est0 = estimate_eep(small_model, payoff100, small_vfun,
                            EstimatorConfig(n_outer=n, n_inner=nd,
                                            allow_exercise_at_0=True),
                            StreamKey(seed=93))
        assert est0.ledger.inner_sims == n * nd * j

    def test_multilevel_counts_exact(self, small_model, payoff100, small_vfun):
        sched = MultilevelSchedule(n_outer_levels=(128, 64, 32),
                                   n_inner_levels=(4, 16, 64))
        est = estimate_multilevel(small_model, payoff100, small_vfun,
                                  EstimatorConfig(n_outer=128, n_inner=4,
                                                  multilevel=sched),
                                  StreamKey(seed=94))
        j = small_model.n_dates
        expected = sum(n * nd * j for n, nd in zip((128, 64, 32), (4, 16, 64)))
        assert est.ledger.inner_sims == expected

    def test_fit_regression_flops(self, small_model, payoff100, small_vfun):
        from dualcv.estimators import CostLedger
        ledger = CostLedger()
        training = simulate_paths(small_model, payoff100, 1000,
                                  StreamKey(seed=95, purpose="training"),
                                  ledger=ledger)
        basis = StateBasis(dim=2, degree=1)
        fit_cv_coefficients(training, small_vfun, basis, HermiteSystem(m=2), 1,
                            ledger=ledger)
        j, nf, q = small_model.n_dates, 2, basis.size
        assert ledger.regress_flops == j * nf * 1000 * q * q
        assert ledger.euler_steps == 1000 * j
