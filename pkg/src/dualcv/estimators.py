"""Nested Monte Carlo upper-bound estimators and the policy lower bound.

All upper bounds share one structure: simulate N outer paths, and at each
date draw N_d one-step sub-samples from the previous outer state to
approximate the conditional expectation of the value function.  The

* dual estimator takes the pathwise maximum of payoff minus the running
  martingale built from those conditional-expectation estimates;
* early-exercise-premium (EEP) estimator accumulates the positive parts
  of exercise value over estimated continuation value and adds the
  terminal payoff;
* control-variate variant subtracts a fitted zero-conditional-mean
  expansion from each inner sample before averaging, shrinking the inner
  variance (and with it the high bias) without changing the estimator's
  expectation;
* multilevel estimator telescopes dual estimates over geometrically
  refined inner sample sizes, coupling each level's coarse term to the
  mean over the four disjoint quarter-size sub-groups of the same fine
  sub-sample.

Both inner-mean approximations are biased high for their targets (inner
averaging enters through a convex maximum / positive part), which is what
makes every estimator here an upper bound in expectation.

Determinism contract: results are a function of (config, key) only.
Outer paths, and each (path, date) block of nested draws, sit at fixed
stream offsets, so chunk sizes and execution order cannot change any
output bit.  Reductions use numpy's fixed-order pairwise summation over
the path axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .basis import block_function_indices, hermite_features
from .errors import ConfigError, NumericalError
from .model import Payoff, payoff_eval, simulate_paths
from .regress import CVModel, ValueFunctions
from .streams import NESTED, OUTER, StreamKey

# Target number of sub-state rows per processing chunk; bounds peak memory
# without affecting results (draws are offset-addressed).
_CHUNK_TARGET = 4_000_000


@dataclass
class CostLedger:
    """Exact work counters, incremented at the call sites that do the work.

    ``euler_steps``: one-step transitions simulated (outer, nested and
    training).  ``inner_sims``: the subset of transitions used as nested
    sub-samples.  ``regress_flops``: n * Q^2 per fitted linear model.
    ``basis_evals``: state-vector evaluations fed to value/coefficient
    functions or regression feature builds.  Wall-clock time is reported
    separately and is the only non-deterministic field.
    """

    euler_steps: int = 0
    inner_sims: int = 0
    regress_flops: int = 0
    basis_evals: int = 0
    wall_seconds: float = 0.0

    def merge(self, other: "CostLedger") -> None:
        self.euler_steps += other.euler_steps
        self.inner_sims += other.inner_sims
        self.regress_flops += other.regress_flops
        self.basis_evals += other.basis_evals
        self.wall_seconds += other.wall_seconds

    def work_units(self) -> int:
        """Deterministic scalar cost used on complexity plots."""
        return self.inner_sims + self.regress_flops + self.basis_evals


@dataclass(frozen=True)
class MultilevelSchedule:
    """Per-level outer and inner sample counts; inner counts refine 4x."""

    n_outer_levels: tuple
    n_inner_levels: tuple

    def __post_init__(self) -> None:
        outer = tuple(int(n) for n in self.n_outer_levels)
        inner = tuple(int(n) for n in self.n_inner_levels)
        if len(outer) != len(inner) or not outer:
            raise ConfigError("multilevel schedule needs matching nonempty level lists")
        if any(n < 1 for n in outer + inner):
            raise ConfigError("multilevel schedule entries must be >= 1")
        for lev in range(1, len(inner)):
            if inner[lev] != 4 * inner[lev - 1]:
                raise ConfigError(
                    f"inner samples must refine 4x per level; level {lev} has "
                    f"{inner[lev]} after {inner[lev - 1]}"
                )
        object.__setattr__(self, "n_outer_levels", outer)
        object.__setattr__(self, "n_inner_levels", inner)

    @property
    def n_levels(self) -> int:
        return len(self.n_outer_levels)


@dataclass(frozen=True)
class EstimatorConfig:
    """Sampling sizes and flags shared by the estimators.

    Exercise at date 0 is excluded by default (the pathwise maximum runs
    over dates 1..J); ``allow_exercise_at_0`` restores the full range.
    ``cv_blocks`` optionally restricts a fitted CV model to its first
    blocks; None uses the whole model.
    """

    n_outer: int
    n_inner: int
    cv_blocks: int | None = None
    allow_exercise_at_0: bool = False
    multilevel: MultilevelSchedule | None = None

    def __post_init__(self) -> None:
        if self.n_outer < 1:
            raise ConfigError(f"n_outer must be >= 1, got {self.n_outer}")
        if self.n_inner < 1:
            raise ConfigError(f"n_inner must be >= 1, got {self.n_inner}")
        if self.cv_blocks is not None and self.cv_blocks < 0:
            raise ConfigError(f"cv_blocks must be >= 0, got {self.cv_blocks}")


@dataclass(frozen=True)
class PriceEstimate:
    """One estimator execution: value, dispersion, work and provenance.

    ``path_values`` holds the per-outer-path payoffs of single-level
    estimators (standard error = their sample std / sqrt(N)); multilevel
    runs store per-level contribution arrays in ``level_values`` instead
    and combine the level variances.
    """

    value: float
    std_error: float
    ledger: CostLedger
    config: EstimatorConfig
    key: StreamKey
    path_values: np.ndarray | None = None
    level_values: tuple | None = None


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def _chunk_bounds(n_paths: int, n_inner: int, m: int):
    rows = max(1, _CHUNK_TARGET // max(1, n_inner * m))
    for start in range(0, n_paths, rows):
        yield start, min(start + rows, n_paths)


def _cv_parts(cv: CVModel | None, cfg: EstimatorConfig):
    """Resolve the number of CV functions to use; 0 disables the CV."""
    if cv is None:
        return None, 0
    if cfg.cv_blocks is None:
        return cv, cv.n_functions
    if cfg.cv_blocks > cv.n_blocks:
        raise ConfigError(
            f"requested {cfg.cv_blocks} CV blocks but the model holds {cv.n_blocks}"
        )
    if cv.mode == "blocks":
        take = len(block_function_indices(cv.system, cfg.cv_blocks))
    else:
        take = cfg.cv_blocks
    return cv, take


def _nested_run(model, payoff: Payoff, vfun, cfg: EstimatorConfig,
                key: StreamKey, cv: CVModel | None, kind: str) -> PriceEstimate:
    """Shared engine for the dual and EEP estimators."""
    t0 = perf_counter()
    ledger = CostLedger()
    n_outer, n_inner = cfg.n_outer, cfg.n_inner
    n_dates, m = model.n_dates, model.m
    cv, n_funcs = _cv_parts(cv, cfg)

    outer = simulate_paths(model, payoff, n_outer, key.with_(purpose=OUTER),
                           ledger=ledger)
    states = outer.states
    g = payoff_eval(payoff, states)  # (N, J+1)
    nested_key = key.with_(purpose=NESTED)

    if kind == "dual":
        running_y = np.zeros(n_outer)
        best = np.full(n_outer, g[0, 0] if cfg.allow_exercise_at_0 else -np.inf)
        first_date = 1
    elif kind == "eep":
        premium = np.zeros(n_outer)
        # the date-1 premium term compares exercise at date 0 against
        # continuation, so it belongs to the exercise-at-0 variant only
        first_date = 1 if cfg.allow_exercise_at_0 else 2
    else:  # pragma: no cover - internal
        raise ValueError(kind)

    for l in range(1, n_dates + 1):
        if kind == "eep" and l < first_date:
            continue
        if cv is not None and n_funcs:
            coef_rows = cv.coefficient_rows(payoff, l, states[:, l - 1], n_funcs)
            ledger.basis_evals += n_outer
        z = np.empty(n_outer)
        for a, b in _chunk_bounds(n_outer, n_inner, m):
            xi = model.innovations(nested_key.with_(date=l),
                                   (b - a, n_inner, m), offset=a * n_inner * m)
            sub = model.step(states[a:b, None, l - 1, :], xi, l)
            if not np.all(np.isfinite(sub)):
                raise NumericalError(f"non-finite sub-state at date {l}")
            inner_vals = vfun.value(l, sub)
            if cv is not None and n_funcs:
                phi = hermite_features(cv.system, cv.function_indices[:n_funcs], xi)
                inner_vals = inner_vals - np.einsum("bf,bnf->bn", coef_rows[a:b], phi)
            z[a:b] = inner_vals.mean(axis=1)
        ledger.euler_steps += n_outer * n_inner
        ledger.inner_sims += n_outer * n_inner
        ledger.basis_evals += n_outer * n_inner
        if kind == "dual":
            v_out = vfun.value(l, states[:, l])
            ledger.basis_evals += n_outer
            running_y += v_out - z
            np.maximum(best, g[:, l] - running_y, out=best)
        else:
            premium += np.maximum(g[:, l - 1] - z, 0.0)

    values = best if kind == "dual" else g[:, n_dates] + premium
    value, se = _mean_and_se(values)
    ledger.wall_seconds = perf_counter() - t0
    return PriceEstimate(value=value, std_error=se, ledger=ledger, config=cfg,
                         key=key, path_values=values)


def estimate_dual_standard(model, payoff: Payoff, vfun, cfg: EstimatorConfig,
                           key: StreamKey) -> PriceEstimate:
    """Plain nested dual upper bound: mean over outer paths of
    ``max_j (g_j - Y_j)`` with inner means of the raw value function."""
    return _nested_run(model, payoff, vfun, cfg, key, cv=None, kind="dual")


def estimate_dual_cv(model, payoff: Payoff, vfun, cv: CVModel,
                     cfg: EstimatorConfig, key: StreamKey) -> PriceEstimate:
    """Dual upper bound with each inner sample reduced by the fitted
    control variate.  With zero blocks this is bit-identical to
    :func:`estimate_dual_standard` under the same key."""
    return _nested_run(model, payoff, vfun, cfg, key, cv=cv, kind="dual")


def estimate_eep(model, payoff: Payoff, vfun, cfg: EstimatorConfig,
                 key: StreamKey, cv: CVModel | None = None) -> PriceEstimate:
    """Early-exercise-premium upper bound: terminal payoff plus summed
    positive parts of exercise value minus estimated continuation.  The
    optional control variate reduces the inner means' variance."""
    return _nested_run(model, payoff, vfun, cfg, key, cv=cv, kind="eep")


def _multilevel_level_terms(model, payoff: Payoff, vfun, n_outer: int,
                            n_inner_fine: int, cfg: EstimatorConfig,
                            key: StreamKey, ledger: CostLedger) -> np.ndarray:
    """Fine-minus-coarse dual payoffs for one refinement level.

    The coarse payoff of a path is the mean of the four dual payoffs
    computed on the four disjoint quarter-size sub-groups of the same
    fine sub-sample, so fine and coarse share every draw.
    """
    n_dates, m = model.n_dates, model.m
    n_coarse = n_inner_fine // 4
    outer = simulate_paths(model, payoff, n_outer, key.with_(purpose=OUTER),
                           ledger=ledger)
    states = outer.states
    g = payoff_eval(payoff, states)
    nested_key = key.with_(purpose=NESTED)

    init = g[0, 0] if cfg.allow_exercise_at_0 else -np.inf
    y_fine = np.zeros(n_outer)
    best_fine = np.full(n_outer, init)
    y_coarse = np.zeros((4, n_outer))
    best_coarse = np.full((4, n_outer), init)

    for l in range(1, n_dates + 1):
        z_fine = np.empty(n_outer)
        z_coarse = np.empty((4, n_outer))
        for a, b in _chunk_bounds(n_outer, n_inner_fine, m):
            xi = model.innovations(nested_key.with_(date=l),
                                   (b - a, n_inner_fine, m),
                                   offset=a * n_inner_fine * m)
            sub = model.step(states[a:b, None, l - 1, :], xi, l)
            if not np.all(np.isfinite(sub)):
                raise NumericalError(f"non-finite sub-state at date {l}")
            inner_vals = vfun.value(l, sub)
            z_fine[a:b] = inner_vals.mean(axis=1)
            for grp in range(4):
                z_coarse[grp, a:b] = inner_vals[:, grp * n_coarse:(grp + 1) * n_coarse].mean(axis=1)
        ledger.euler_steps += n_outer * n_inner_fine
        ledger.inner_sims += n_outer * n_inner_fine
        ledger.basis_evals += n_outer * n_inner_fine
        v_out = vfun.value(l, states[:, l])
        ledger.basis_evals += n_outer
        y_fine += v_out - z_fine
        np.maximum(best_fine, g[:, l] - y_fine, out=best_fine)
        y_coarse += v_out - z_coarse
        np.maximum(best_coarse, g[:, l] - y_coarse, out=best_coarse)

    return best_fine - best_coarse.mean(axis=0)


def estimate_multilevel(model, payoff: Payoff, vfun, cfg: EstimatorConfig,
                        key: StreamKey) -> PriceEstimate:
    """Telescoping multilevel dual estimate over the configured schedule.

    Level 0 is a standard dual estimate; each later level averages
    coupled fine-minus-coarse corrections, so the expectation equals that
    of a standard dual estimate at the finest inner sample size.
    """
    if cfg.multilevel is None:
        raise ConfigError("estimate_multilevel requires cfg.multilevel")
    t0 = perf_counter()
    sched = cfg.multilevel
    ledger = CostLedger()
    value = 0.0
    var_of_mean = 0.0
    level_values = []
    for lev in range(sched.n_levels):
        level_key = key.with_(level=lev)
        n_outer = sched.n_outer_levels[lev]
        n_inner = sched.n_inner_levels[lev]
        if lev == 0:
            level_cfg = EstimatorConfig(n_outer=n_outer, n_inner=n_inner,
                                        allow_exercise_at_0=cfg.allow_exercise_at_0)
            est = _nested_run(model, payoff, vfun, level_cfg, level_key,
                              cv=None, kind="dual")
            ledger.merge(est.ledger)
            terms = est.path_values
        else:
            terms = _multilevel_level_terms(model, payoff, vfun, n_outer,
                                            n_inner, cfg, level_key, ledger)
        level_values.append(terms)
        value += float(terms.mean())
        if n_outer > 1:
            var_of_mean += float(terms.var(ddof=1)) / n_outer
    ledger.wall_seconds = perf_counter() - t0
    return PriceEstimate(value=value, std_error=math.sqrt(var_of_mean),
                         ledger=ledger, config=cfg, key=key,
                         path_values=None, level_values=tuple(level_values))


def estimate_lower_bound(model, payoff: Payoff, vfun: ValueFunctions,
                         n_paths: int, key: StreamKey) -> PriceEstimate:
    """Value of the fitted exercise policy on fresh paths.

    Stops at the first date j >= 1 whose exercise value reaches the
    fitted continuation value (forced stop at the final date); the mean
    stopped payoff is a lower bound for the price and the sanity floor
    for every upper-bound estimate.
    """
    t0 = perf_counter()
    ledger = CostLedger()
    paths = simulate_paths(model, payoff, n_paths, key.with_(purpose=OUTER),
                           ledger=ledger)
    states = paths.states
    n_dates = model.n_dates
    g = payoff_eval(payoff, states)
    stopped = g[:, n_dates].copy()
    alive = np.ones(n_paths, dtype=bool)
    for j in range(1, n_dates):
        cont = vfun.continuation_value(j, states[:, j])
        ledger.basis_evals += n_paths
        exercise = alive & (g[:, j] >= cont)
        stopped[exercise] = g[exercise, j]
        alive &= ~exercise
    value, se = _mean_and_se(stopped)
    ledger.wall_seconds = perf_counter() - t0
    cfg = EstimatorConfig(n_outer=n_paths, n_inner=1)
    return PriceEstimate(value=value, std_error=se, ledger=ledger, config=cfg,
                         key=key, path_values=stopped)
