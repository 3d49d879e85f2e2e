"""Experiment orchestration: reference prices, epsilon sweeps, RMSE tables,
log-log complexity slopes and CSV reporting.

The sweep reproduces cost-versus-accuracy curves: for each estimator and
each accuracy target ``eps`` the sampling sizes follow fixed power
schedules (standard: ``N_d = 2 / eps^2``; control variate: ``N_d = 8 /
eps`` with ``N_r = 256 / eps`` training paths; multilevel: ``L =
-log2(eps) - 2`` levels with ``(N_d)_l = 48 * 4^l`` and ``N_l =
2^(16-l)``), all at a fixed outer size ``N = 5e4``.  A scale factor in
(0, 1] multiplies every sampling size for desk-scale runs while leaving
the schedules' shape, and hence slope comparisons, intact.

Reported cost is the deterministic ledger component dominated by inner
simulations (``inner_sims + regress_flops``); wall-clock time is recorded
separately and is the only non-reproducible column.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .basis import HermiteSystem, StateBasis
from .errors import ConfigError
from .estimators import (
    CostLedger,
    EstimatorConfig,
    MultilevelSchedule,
    estimate_dual_cv,
    estimate_dual_standard,
    estimate_multilevel,
)
from .model import Payoff, simulate_paths
from .regress import ValueFunctions, fit_cv_coefficients, fit_lower_bound_tv
from .streams import REFERENCE_LANE, TRAINING, TV_TRAINING_LANE, StreamKey

BASE_OUTER = 50_000

DEFAULT_EPSILONS = (0.25, 0.125, 0.0625, 0.03125)
DEFAULT_EPSILONS_CV = DEFAULT_EPSILONS + (0.015625,)

ESTIMATOR_NAMES = ("standard", "cv", "multilevel")

RUN_COLUMNS = (
    "estimator", "epsilon", "replication", "estimate", "ref_value",
    "N", "N_d", "N_r", "K", "Q", "J", "levels",
    "euler_steps", "inner_sims", "regress_flops", "wall_seconds", "seed",
)
RMSE_COLUMNS = ("estimator", "epsilon", "rmse", "bias", "stdev",
                "mean_cost", "n_replications")
SLOPE_COLUMNS = ("estimator", "slope", "intercept", "n_points")


def scaled_size(value: float, scale: float) -> int:
    """Scale a schedule size, keeping it an integer >= 1."""
    return max(1, int(round(value * scale)))


def standard_schedule(eps: float, scale: float = 1.0) -> dict:
    return {"N": scaled_size(BASE_OUTER, scale),
            "N_d": scaled_size(2.0 / (eps * eps), scale)}


def cv_schedule(eps: float, dim: int, scale: float = 1.0, n_blocks: int = 1) -> dict:
    return {"N": scaled_size(BASE_OUTER, scale),
            "N_d": scaled_size(8.0 / eps, scale),
            "N_r": scaled_size(256.0 / eps, scale),
            "K": n_blocks,
            "Q": dim + 2}


def multilevel_schedule(eps: float, scale: float = 1.0) -> MultilevelSchedule:
    n_levels = max(0, round(-math.log2(eps)) - 2) + 1
    inner0 = scaled_size(48, scale)
    return MultilevelSchedule(
        n_outer_levels=tuple(scaled_size(2 ** (16 - lev), scale)
                             for lev in range(n_levels)),
        n_inner_levels=tuple(inner0 * 4 ** lev for lev in range(n_levels)),
    )


@dataclass(frozen=True)
class SweepSpec:
    """What to run: estimators, accuracy targets, replications, scale."""

    estimators: tuple = ESTIMATOR_NAMES
    epsilons_standard: tuple = DEFAULT_EPSILONS
    epsilons_cv: tuple = DEFAULT_EPSILONS_CV
    epsilons_multilevel: tuple = DEFAULT_EPSILONS
    replications: int = 100
    scale: float = 1.0
    cv_blocks: int = 1
    cv_mode: str = "blocks"
    cv_degree: int = 1
    allow_exercise_at_0: bool = False

    def __post_init__(self) -> None:
        for name in self.estimators:
            if name not in ESTIMATOR_NAMES:
                raise ConfigError(f"unknown estimator {name!r}")
        for label, eps_list in (("standard", self.epsilons_standard),
                                ("cv", self.epsilons_cv),
                                ("multilevel", self.epsilons_multilevel)):
            eps = tuple(float(e) for e in eps_list)
            if any(not 0.0 < e < 1.0 for e in eps):
                raise ConfigError(f"{label} epsilons must lie in (0, 1)")
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError(f"{label} epsilons must be strictly decreasing")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0.0 < self.scale <= 1.0:
            raise ConfigError("scale must lie in (0, 1]")
        if self.cv_blocks < 0:
            raise ConfigError("cv_blocks must be >= 0")

    def epsilons_for(self, estimator: str) -> tuple:
        return {"standard": self.epsilons_standard,
                "cv": self.epsilons_cv,
                "multilevel": self.epsilons_multilevel}[estimator]


@dataclass(frozen=True)
class ReferencePrice:
    """High-accuracy reference: mean of independent standard-dual runs."""

    value: float
    std_error: float
    replications: int
    config: EstimatorConfig


@dataclass(frozen=True)
class RunRecord:
    """One estimator execution; exactly one CSV row."""

    estimator: str
    epsilon: float
    replication: int
    estimate: float
    ref_value: float
    N: int
    N_d: int
    N_r: int
    K: int
    Q: int
    J: int
    levels: int
    euler_steps: int
    inner_sims: int
    regress_flops: int
    wall_seconds: float
    seed: int


def run_cost(record: RunRecord) -> int:
    """Deterministic cost scalar used on complexity plots."""
    return record.inner_sims + record.regress_flops


def fit_value_functions(model, payoff: Payoff, n_training: int, degree: int,
                        key: StreamKey, ledger: CostLedger | None = None) -> ValueFunctions:
    """Fit the shared lower-bound value functions on a dedicated stream."""
    train_key = key.with_(purpose=TRAINING, lane=TV_TRAINING_LANE)
    training = simulate_paths(model, payoff, n_training, train_key, ledger=ledger)
    basis = StateBasis(dim=model.dim, degree=degree, include_payoff=True)
    return fit_lower_bound_tv(training, payoff, basis, ledger=ledger)


def compute_reference(model, payoff: Payoff, vfun, reps: int,
                      cfg: EstimatorConfig, key: StreamKey) -> ReferencePrice:
    """Mean and standard error over independent standard-dual runs."""
    if reps < 2:
        raise ConfigError(f"reference needs at least 2 replications, got {reps}")
    estimates = np.empty(reps)
    for i in range(reps):
        run_key = key.with_(replication=i, lane=REFERENCE_LANE)
        estimates[i] = estimate_dual_standard(model, payoff, vfun, cfg, run_key).value
    return ReferencePrice(value=float(estimates.mean()),
                          std_error=float(estimates.std(ddof=1) / math.sqrt(reps)),
                          replications=reps, config=cfg)


def _sweep_lanes(sweep: SweepSpec) -> dict:
    """Stable lane per epsilon value, shared across estimators."""
    all_eps = sorted({float(e) for name in sweep.estimators
                      for e in sweep.epsilons_for(name)}, reverse=True)
    return {e: lane for lane, e in enumerate(all_eps)}


def _one_run(sweep: SweepSpec, estimator: str, eps: float, rep: int, lane: int,
             model, payoff, vfun, ref_value: float, key: StreamKey) -> RunRecord:
    run_key = key.with_(replication=rep, lane=lane)
    n_dates = model.n_dates
    if estimator == "standard":
        params = standard_schedule(eps, sweep.scale)
        cfg = EstimatorConfig(n_outer=params["N"], n_inner=params["N_d"],
                              allow_exercise_at_0=sweep.allow_exercise_at_0)
        est = estimate_dual_standard(model, payoff, vfun, cfg, run_key)
        ledger = est.ledger
        n_r = k = q = levels = 0
        n_outer, n_inner = params["N"], params["N_d"]
    elif estimator == "cv":
        t0 = perf_counter()
        params = cv_schedule(eps, model.dim, sweep.scale, sweep.cv_blocks)
        ledger = CostLedger()
        training = simulate_paths(model, payoff, params["N_r"],
                                  run_key.with_(purpose=TRAINING), ledger=ledger)
        cv_basis = StateBasis(dim=model.dim, degree=sweep.cv_degree,
                              include_payoff=True)
        system = HermiteSystem(m=model.m)
        cv = fit_cv_coefficients(training, vfun, cv_basis, system,
                                 sweep.cv_blocks, mode=sweep.cv_mode,
                                 ledger=ledger)
        cfg = EstimatorConfig(n_outer=params["N"], n_inner=params["N_d"],
                              allow_exercise_at_0=sweep.allow_exercise_at_0)
        est = estimate_dual_cv(model, payoff, vfun, cv, cfg, run_key)
        ledger.merge(est.ledger)
        ledger.wall_seconds = perf_counter() - t0  # fit + pricing together
        n_r, k, q, levels = params["N_r"], params["K"], cv_basis.size, 0
        n_outer, n_inner = params["N"], params["N_d"]
    elif estimator == "multilevel":
        sched = multilevel_schedule(eps, sweep.scale)
        cfg = EstimatorConfig(n_outer=sched.n_outer_levels[0],
                              n_inner=sched.n_inner_levels[0],
                              allow_exercise_at_0=sweep.allow_exercise_at_0,
                              multilevel=sched)
        est = estimate_multilevel(model, payoff, vfun, cfg, run_key)
        ledger = est.ledger
        n_r = k = q = 0
        levels = sched.n_levels - 1
        n_outer, n_inner = sched.n_outer_levels[0], sched.n_inner_levels[0]
    else:
        raise ConfigError(f"unknown estimator {estimator!r}")
    return RunRecord(
        estimator=estimator, epsilon=float(eps), replication=rep,
        estimate=est.value, ref_value=ref_value,
        N=n_outer, N_d=n_inner, N_r=n_r, K=k, Q=q, J=n_dates, levels=levels,
        euler_steps=ledger.euler_steps, inner_sims=ledger.inner_sims,
        regress_flops=ledger.regress_flops, wall_seconds=ledger.wall_seconds,
        seed=key.seed,
    )


def run_sweep(sweep: SweepSpec, model, payoff: Payoff, vfun, key: StreamKey,
              ref_value: float = float("nan"),
              partial_path=None) -> list[RunRecord]:
    """Run every (estimator, epsilon, replication) cell of the sweep.

    Records come back in deterministic (estimator, epsilon, replication)
    order.  If any run fails, the records completed so far are written to
    ``partial_path`` (when given) and the error is re-raised.
    """
    lanes = _sweep_lanes(sweep)
    records: list[RunRecord] = []
    try:
        for estimator in sweep.estimators:
            for eps in sweep.epsilons_for(estimator):
                for rep in range(sweep.replications):
                    records.append(_one_run(sweep, estimator, float(eps), rep,
                                            lanes[float(eps)], model, payoff,
                                            vfun, ref_value, key))
    except Exception:
        if partial_path is not None:
            write_run_csv(records, partial_path)
        raise
    records.sort(key=lambda r: (r.estimator, -r.epsilon, r.replication))
    return records


@dataclass(frozen=True)
class RmseCell:
    """RMSE of one (estimator, epsilon) cell against the reference."""

    estimator: str
    epsilon: float
    rmse: float
    bias: float
    stdev: float
    mean_cost: float
    n_replications: int


def estimate_rmse(records, ref: ReferencePrice) -> list[RmseCell]:
    """Per-cell RMSE versus the reference value.

    RMSE**2 decomposes exactly into bias**2 + stdev**2 (population
    moments over the cell's replications).
    """
    cells: dict = {}
    for rec in records:
        cells.setdefault((rec.estimator, rec.epsilon), []).append(rec)
    thin = [f"{name} eps={eps:g} ({len(group)} run)"
            for (name, eps), group in cells.items() if len(group) < 2]
    if thin:
        raise ConfigError("cells with fewer than 2 replications: " + ", ".join(thin))
    out = []
    for (name, eps), group in sorted(cells.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        estimates = np.array([r.estimate for r in group])
        bias = float(estimates.mean() - ref.value)
        stdev = float(estimates.std(ddof=0))
        rmse = float(np.sqrt(np.mean((estimates - ref.value) ** 2)))
        mean_cost = float(np.mean([run_cost(r) for r in group]))
        out.append(RmseCell(estimator=name, epsilon=eps, rmse=rmse, bias=bias,
                            stdev=stdev, mean_cost=mean_cost,
                            n_replications=len(group)))
    return out


@dataclass(frozen=True)
class SlopeFit:
    """Fitted complexity exponent: cost ~ RMSE^(-slope)."""

    estimator: str
    slope: float
    intercept: float
    n_points: int


def fit_loglog_slope(points, estimator: str = "") -> SlopeFit:
    """Least-squares fit of log(cost) against log(1/rmse).

    ``points`` is a sequence of (cost, rmse) pairs, all strictly
    positive; the returned slope is the exponent in cost ~ RMSE^(-slope).
    """
    pts = [(float(c), float(r)) for c, r in points]
    if len(pts) < 2:
        raise ConfigError(f"need at least 2 points for a slope fit, got {len(pts)}")
    if any(c <= 0 or r <= 0 for c, r in pts):
        raise ConfigError("slope fit requires strictly positive costs and RMSEs")
    x = np.array([math.log(1.0 / r) for _, r in pts])
    y = np.array([math.log(c) for c, _ in pts])
    design = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    return SlopeFit(estimator=estimator, slope=float(slope),
                    intercept=float(intercept), n_points=len(pts))


def slopes_from_rmse(cells) -> list[SlopeFit]:
    """One slope fit per estimator present in an RMSE table."""
    by_name: dict = {}
    for cell in cells:
        by_name.setdefault(cell.estimator, []).append((cell.mean_cost, cell.rmse))
    return [fit_loglog_slope(pts, estimator=name)
            for name, pts in sorted(by_name.items())]


# ---------------------------------------------------------------------------
# CSV reporting: UTF-8, LF, comma-separated, 17 significant digits so that
# every float round-trips bit-exactly.


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise ConfigError(f"cannot write CSV to {path}: {exc}") from exc


def write_run_csv(records, path) -> None:
    rows = [
        (r.estimator, r.epsilon, r.replication, r.estimate, r.ref_value,
         r.N, r.N_d, r.N_r, r.K, r.Q, r.J, r.levels,
         r.euler_steps, r.inner_sims, r.regress_flops, r.wall_seconds, r.seed)
        for r in records
    ]
    _write_csv(path, RUN_COLUMNS, rows)


def read_run_csv(path) -> list[RunRecord]:
    """Parse a run CSV written by :func:`write_run_csv`."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != RUN_COLUMNS:
                raise ConfigError(f"unexpected run CSV header in {path}")
            types = [str, float, int, float, float, int, int, int, int, int,
                     int, int, int, int, int, float, int]
            return [
                RunRecord(*(t(v) for t, v in zip(types, row)))
                for row in reader if row
            ]
    except OSError as exc:
        raise ConfigError(f"cannot read CSV from {path}: {exc}") from exc


def write_rmse_csv(cells, path) -> None:
    rows = [(c.estimator, c.epsilon, c.rmse, c.bias, c.stdev, c.mean_cost,
             c.n_replications) for c in cells]
    _write_csv(path, RMSE_COLUMNS, rows)


def write_slope_csv(fits, path) -> None:
    rows = [(f.estimator, f.slope, f.intercept, f.n_points) for f in fits]
    _write_csv(path, SLOPE_COLUMNS, rows)
