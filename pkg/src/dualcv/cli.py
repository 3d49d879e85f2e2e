"""Command-line workflow: fit, price, reference, sweep, validate.

Configuration lives in one INI-style text file (parsed by
:mod:`configparser`) whose header section carries a format version::

    [dualcv]
    config_version = 1

    [model]
    dim = 2
    rate = 0.0            ; per year
    dividends = 0.02      ; per year, scalar or comma-separated per asset
    sigmas = 0.2          ; per sqrt(year), scalar or comma-separated
    rho = identity        ; or semicolon-separated matrix rows
    spot = 100            ; scalar or comma-separated per asset
    horizon = 1.0         ; years
    dates = 20            ; exercise dates J (step = horizon / dates)
    strike = 100

    [fit]
    tv_degree = 2         ; value-function basis degree
    tv_paths = 50000      ; training paths for the value functions
    cv_blocks = 1         ; Hermite blocks (0 disables the CV fit)
    cv_degree = 1         ; CV coefficient basis degree
    cv_paths = 4096       ; training paths for the CV fit
    cv_mode = blocks      ; blocks | scalar truncation reading

    [estimator]
    n_outer = 5000        ; outer paths N
    n_inner = 200         ; inner sub-samples N_d
    allow_exercise_at_0 = false

    [sweep]
    estimators = standard, cv, multilevel
    replications = 100
    scale = 0.1           ; multiplies N, N_d, N_r, N_l
    epsilons_standard = 0.25, 0.125, 0.0625, 0.03125
    epsilons_cv = 0.25, 0.125, 0.0625, 0.03125, 0.015625
    epsilons_multilevel = 0.25, 0.125, 0.0625, 0.03125
    reference_replications = 10
    reference_scale = 0.1

    [run]
    seed = 20180310       ; 64-bit master seed
    out_dir = out

    All sections except [dualcv], [model] and [run] are optional; unknown
    sections or keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 artifact/version error.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import StateBasis
from .errors import ArtifactError, ConfigError, DualcvError, NumericalError
from .estimators import (
    CostLedger,
    EstimatorConfig,
    estimate_dual_cv,
    estimate_dual_standard,
    estimate_eep,
    estimate_lower_bound,
    estimate_multilevel,
)
from .harness import (
    SweepSpec,
    compute_reference,
    estimate_rmse,
    fit_value_functions,
    multilevel_schedule,
    run_sweep,
    slopes_from_rmse,
    write_rmse_csv,
    write_run_csv,
    write_slope_csv,
    RunRecord,
)
from .model import ModelSpec, Payoff, simulate_paths
from .regress import fit_cv_coefficients, load_artifacts, save_artifacts
from .basis import HermiteSystem
from .streams import TRAINING, StreamKey

CONFIG_VERSION = 1

_CONFIG_KEYS = {
    "dualcv": {"config_version"},
    "model": {"dim", "rate", "dividends", "sigmas", "rho", "spot", "horizon",
              "dates", "strike"},
    "fit": {"tv_degree", "tv_paths", "cv_blocks", "cv_degree", "cv_paths",
            "cv_mode"},
    "estimator": {"n_outer", "n_inner", "allow_exercise_at_0"},
    "sweep": {"estimators", "replications", "scale", "epsilons_standard",
              "epsilons_cv", "epsilons_multilevel", "reference_replications",
              "reference_scale"},
    "run": {"seed", "out_dir"},
}

_KEY_UNITS = {
    "model.dim": "assets (count)",
    "model.rate": "per year",
    "model.dividends": "per year, scalar or one value per asset",
    "model.sigmas": "per sqrt(year), scalar or one value per asset",
    "model.rho": "'identity' or semicolon-separated correlation rows",
    "model.spot": "currency, scalar or one value per asset",
    "model.horizon": "years",
    "model.dates": "exercise dates (count)",
    "model.strike": "currency",
    "fit.tv_degree": "polynomial degree (value-function basis)",
    "fit.tv_paths": "training paths (count)",
    "fit.cv_blocks": "Hermite blocks (count, 0 disables)",
    "fit.cv_degree": "polynomial degree (CV coefficient basis)",
    "fit.cv_paths": "training paths (count)",
    "fit.cv_mode": "'blocks' or 'scalar' truncation reading",
    "estimator.n_outer": "outer paths (count)",
    "estimator.n_inner": "inner sub-samples per date (count)",
    "estimator.allow_exercise_at_0": "boolean",
    "sweep.estimators": "comma-separated: standard, cv, multilevel",
    "sweep.replications": "macro-replications per cell (count)",
    "sweep.scale": "fraction in (0, 1] multiplying N, N_d, N_r, N_l",
    "sweep.epsilons_standard": "accuracy targets, strictly decreasing",
    "sweep.epsilons_cv": "accuracy targets, strictly decreasing",
    "sweep.epsilons_multilevel": "accuracy targets, strictly decreasing",
    "sweep.reference_replications": "independent reference runs (count)",
    "sweep.reference_scale": "fraction in (0, 1] for the reference run",
    "run.seed": "64-bit unsigned master seed",
    "run.out_dir": "output directory path",
}


@dataclass(frozen=True)
class Config:
    """Validated CLI configuration."""

    model: ModelSpec
    payoff: Payoff
    tv_degree: int
    tv_paths: int
    cv_blocks: int
    cv_degree: int
    cv_paths: int
    cv_mode: str
    n_outer: int
    n_inner: int
    allow_exercise_at_0: bool
    sweep: SweepSpec
    reference_replications: int
    reference_scale: float
    seed: int
    out_dir: Path


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(part) for part in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name}: {text!r}") from exc


def _parse_bool(text: str, name: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{name} must be a boolean, got {text!r}")


def _parse_rho(text: str, dim: int) -> np.ndarray:
    if text.strip().lower() == "identity":
        return np.eye(dim)
    rows = [_parse_floats(row, "model.rho row") for row in text.split(";")]
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ConfigError(f"model.rho must be 'identity' or {dim} rows of {dim} entries")
    return np.array(rows)


def load_config(path) -> Config:
    """Parse and validate a configuration file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _CONFIG_KEYS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    for required in ("dualcv", "model", "run"):
        if required not in parser:
            raise ConfigError(f"config file must contain a [{required}] section")

    version = parser.getint("dualcv", "config_version", fallback=None)
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config_version must be {CONFIG_VERSION}, got {version!r}"
        )

    sec = parser["model"]
    try:
        dim = sec.getint("dim")
        rate = sec.getfloat("rate")
        horizon = sec.getfloat("horizon")
        dates = sec.getint("dates")
        strike = sec.getfloat("strike")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad [model] value: {exc}") from exc
    if dim is None or rate is None or horizon is None or dates is None or strike is None:
        raise ConfigError("[model] requires dim, rate, dividends, sigmas, spot, "
                          "horizon, dates, strike")

    def vector(key):
        raw = sec.get(key)
        if raw is None:
            raise ConfigError(f"[model] is missing {key}")
        vals = _parse_floats(raw, f"model.{key}")
        if len(vals) == 1:
            return vals[0]
        return vals

    model = ModelSpec(dim=dim, rate=rate, dividends=vector("dividends"),
                      sigmas=vector("sigmas"),
                      rho=_parse_rho(sec.get("rho", "identity"), dim),
                      spot=vector("spot"), horizon=horizon, n_dates=dates)
    payoff = Payoff(strike=strike)

    fit = parser["fit"] if "fit" in parser else {}
    est = parser["estimator"] if "estimator" in parser else {}
    swp = parser["sweep"] if "sweep" in parser else {}
    run = parser["run"]

    def get_int(section, mapping, key, default):
        raw = mapping.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from exc

    def get_float(section, mapping, key, default):
        raw = mapping.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from exc

    tv_degree = get_int("fit", fit, "tv_degree", 2)
    tv_paths = get_int("fit", fit, "tv_paths", 50_000)
    cv_blocks = get_int("fit", fit, "cv_blocks", 1)
    cv_degree = get_int("fit", fit, "cv_degree", 1)
    cv_paths = get_int("fit", fit, "cv_paths", 4096)
    cv_mode = fit.get("cv_mode", "blocks")
    if cv_mode not in ("blocks", "scalar"):
        raise ConfigError(f"fit.cv_mode must be 'blocks' or 'scalar', got {cv_mode!r}")

    n_outer = get_int("estimator", est, "n_outer", 5000)
    n_inner = get_int("estimator", est, "n_inner", 200)
    allow0 = _parse_bool(est.get("allow_exercise_at_0", "false"),
                         "estimator.allow_exercise_at_0")

    estimators = tuple(
        name.strip() for name in swp.get("estimators", "standard, cv, multilevel").split(",")
        if name.strip()
    )
    sweep_kwargs = dict(
        estimators=estimators,
        replications=get_int("sweep", swp, "replications", 100),
        scale=get_float("sweep", swp, "scale", 0.1),
        cv_blocks=cv_blocks if cv_blocks > 0 else 1,
        cv_mode=cv_mode,
        cv_degree=cv_degree,
        allow_exercise_at_0=allow0,
    )
    for field_name in ("epsilons_standard", "epsilons_cv", "epsilons_multilevel"):
        raw = swp.get(field_name)
        if raw is not None:
            sweep_kwargs[field_name] = tuple(_parse_floats(raw, f"sweep.{field_name}"))
    sweep = SweepSpec(**sweep_kwargs)

    seed = get_int("run", run, "seed", None)
    if seed is None or not 0 <= seed < 2**64:
        raise ConfigError("run.seed is required and must be a 64-bit unsigned integer")

    return Config(
        model=model, payoff=payoff,
        tv_degree=tv_degree, tv_paths=tv_paths,
        cv_blocks=cv_blocks, cv_degree=cv_degree, cv_paths=cv_paths,
        cv_mode=cv_mode,
        n_outer=n_outer, n_inner=n_inner, allow_exercise_at_0=allow0,
        sweep=sweep,
        reference_replications=get_int("sweep", swp, "reference_replications", 10),
        reference_scale=get_float("sweep", swp, "reference_scale", 0.1),
        seed=seed, out_dir=Path(run.get("out_dir", "out")),
    )


def _fingerprint(cfg: Config) -> dict:
    return {
        "dim": cfg.model.dim,
        "dates": cfg.model.n_dates,
        "horizon": cfg.model.horizon,
        "strike": cfg.payoff.strike,
        "seed": cfg.seed,
    }


def _artifact_path(cfg: Config, out_dir: Path | None) -> Path:
    return (out_dir or cfg.out_dir) / "artifacts.npz"


def _limit_threads(n_threads: int) -> None:
    # Governs BLAS pools where available; all results are independent of
    # the thread count by construction (elementwise maps, fixed-order
    # reductions).
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n_threads)
    except Exception:
        pass


def cmd_validate(cfg: Config, args) -> int:
    print(f"config ok: {cfg.model.dim}-d model, {cfg.model.n_dates} dates, "
          f"strike {cfg.payoff.strike}, seed {cfg.seed}")
    return 0


def cmd_fit(cfg: Config, args) -> int:
    out_dir = args.out or cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    key = StreamKey(seed=cfg.seed)
    ledger = CostLedger()
    vfun = fit_value_functions(cfg.model, cfg.payoff, cfg.tv_paths,
                               cfg.tv_degree, key, ledger=ledger)
    d, deg = cfg.model.dim, cfg.tv_degree
    q = StateBasis(dim=d, degree=deg, include_payoff=True).size
    expected = math.comb(d + deg, deg) + 1
    print(f"value functions: {cfg.model.n_dates - 1} continuation models, "
          f"{q} basis functions (degree-{deg} monomials plus payoff; "
          f"formula count {expected})")
    if q != expected:
        raise NumericalError("basis size does not match its closed-form count")
    for j, m in enumerate(vfun.continuation, start=1):
        if m.ridge:
            print(f"  date {j}: ridge fit (cond {m.cond:.3g})")
    cv = None
    if cfg.cv_blocks > 0:
        training = simulate_paths(cfg.model, cfg.payoff, cfg.cv_paths,
                                  key.with_(purpose=TRAINING), ledger=ledger)
        cv_basis = StateBasis(dim=d, degree=cfg.cv_degree, include_payoff=True)
        cv = fit_cv_coefficients(training, vfun, cv_basis,
                                 HermiteSystem(m=cfg.model.m), cfg.cv_blocks,
                                 mode=cfg.cv_mode, ledger=ledger)
        print(f"control variate: {cv.n_functions} coefficient functions per date "
              f"({cfg.cv_blocks} block(s), mode {cfg.cv_mode}), "
              f"truncation level {cv.truncation:.6g}")
    path = _artifact_path(cfg, args.out)
    save_artifacts(path, cfg.payoff, vfun, cv, fingerprint=_fingerprint(cfg))
    print(f"artifacts written to {path} "
          f"(euler steps {ledger.euler_steps}, regression flops {ledger.regress_flops})")
    return 0


def _load_for_pricing(cfg: Config, args):
    path = _artifact_path(cfg, args.out)
    if not path.exists():
        raise ConfigError(f"missing artifacts at {path}; run 'fit' first")
    payoff, vfun, cv, fingerprint = load_artifacts(path)
    for key_name in ("dim", "dates", "strike"):
        ours = _fingerprint(cfg)[key_name]
        theirs = fingerprint.get(key_name)
        if theirs is not None and theirs != ours:
            raise ArtifactError(
                f"artifact {path} was fitted for {key_name}={theirs}, "
                f"config has {key_name}={ours}"
            )
    return payoff, vfun, cv


def cmd_price(cfg: Config, args) -> int:
    out_dir = args.out or cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    payoff, vfun, cv = _load_for_pricing(cfg, args)
    key = StreamKey(seed=cfg.seed)
    est_cfg = EstimatorConfig(n_outer=cfg.n_outer, n_inner=cfg.n_inner,
                              allow_exercise_at_0=cfg.allow_exercise_at_0)
    name = args.estimator
    if name == "standard":
        est = estimate_dual_standard(cfg.model, payoff, vfun, est_cfg, key)
    elif name == "cv":
        if cv is None:
            raise ConfigError("artifacts hold no control variate; refit with cv_blocks > 0")
        est = estimate_dual_cv(cfg.model, payoff, vfun, cv, est_cfg, key)
    elif name == "eep":
        est = estimate_eep(cfg.model, payoff, vfun, est_cfg, key, cv=cv)
    elif name == "multilevel":
        sched = multilevel_schedule(args.epsilon, cfg.sweep.scale)
        ml_cfg = EstimatorConfig(n_outer=sched.n_outer_levels[0],
                                 n_inner=sched.n_inner_levels[0],
                                 allow_exercise_at_0=cfg.allow_exercise_at_0,
                                 multilevel=sched)
        est = estimate_multilevel(cfg.model, payoff, vfun, ml_cfg, key)
    elif name == "lower":
        est = estimate_lower_bound(cfg.model, payoff, vfun, cfg.n_outer, key)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown estimator {name!r}")
    ledger = est.ledger
    print(f"{name}: {est.value:.6f} +- {est.std_error:.6f} "
          f"(N={est.config.n_outer}, N_d={est.config.n_inner}, "
          f"inner sims {ledger.inner_sims}, euler steps {ledger.euler_steps}, "
          f"wall {ledger.wall_seconds:.2f}s)")
    record = RunRecord(
        estimator=name, epsilon=float("nan"), replication=0, estimate=est.value,
        ref_value=float("nan"), N=est.config.n_outer, N_d=est.config.n_inner,
        N_r=0, K=0, Q=0, J=cfg.model.n_dates,
        levels=(est.config.multilevel.n_levels - 1 if est.config.multilevel else 0),
        euler_steps=ledger.euler_steps, inner_sims=ledger.inner_sims,
        regress_flops=ledger.regress_flops, wall_seconds=ledger.wall_seconds,
        seed=cfg.seed,
    )
    write_run_csv([record], out_dir / f"price_{name}.csv")
    return 0


def cmd_reference(cfg: Config, args) -> int:
    out_dir = args.out or cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    payoff, vfun, _ = _load_for_pricing(cfg, args)
    from .harness import scaled_size, BASE_OUTER
    n = scaled_size(BASE_OUTER, cfg.reference_scale)
    ref_cfg = EstimatorConfig(n_outer=n, n_inner=n,
                              allow_exercise_at_0=cfg.allow_exercise_at_0)
    ref = compute_reference(cfg.model, payoff, vfun, cfg.reference_replications,
                            ref_cfg, StreamKey(seed=cfg.seed))
    print(f"reference: {ref.value:.6f} +- {ref.std_error:.6f} "
          f"({ref.replications} replications at N=N_d={n})")
    with open(out_dir / "reference.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("value,std_error,replications,N\n")
        fh.write(f"{ref.value:.17g},{ref.std_error:.17g},{ref.replications},{n}\n")
    return 0


def cmd_sweep(cfg: Config, args) -> int:
    out_dir = args.out or cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    payoff, vfun, _ = _load_for_pricing(cfg, args)
    key = StreamKey(seed=cfg.seed)
    from .harness import scaled_size, BASE_OUTER
    n = scaled_size(BASE_OUTER, cfg.reference_scale)
    ref_cfg = EstimatorConfig(n_outer=n, n_inner=n,
                              allow_exercise_at_0=cfg.allow_exercise_at_0)
    ref = compute_reference(cfg.model, payoff, vfun, cfg.reference_replications,
                            ref_cfg, key)
    print(f"reference: {ref.value:.6f} +- {ref.std_error:.6f}")
    records = run_sweep(cfg.sweep, cfg.model, payoff, vfun, key,
                        ref_value=ref.value,
                        partial_path=out_dir / "runs_partial.csv")
    write_run_csv(records, out_dir / "runs.csv")
    cells = estimate_rmse(records, ref)
    write_rmse_csv(cells, out_dir / "rmse.csv")
    fits = slopes_from_rmse(cells)
    write_slope_csv(fits, out_dir / "slopes.csv")
    for fit in fits:
        print(f"{fit.estimator}: cost ~ RMSE^-{fit.slope:.3f} over {fit.n_points} points")
    print(f"wrote {out_dir / 'runs.csv'}, {out_dir / 'rmse.csv'}, {out_dir / 'slopes.csv'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    units = "\n".join(f"  {k:32s} {v}" for k, v in _KEY_UNITS.items())
    parser = argparse.ArgumentParser(
        prog="dualcv",
        description=__doc__.split("\n\n")[0],
        epilog="config keys and units:\n" + units,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", "-c", required=True, help="path to the INI config file")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (overrides run.out_dir)")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread cap; results do not depend on it")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", help="parse and validate the config, then exit")
    sub.add_parser("fit", help="fit value functions (and CV) and write artifacts")
    price = sub.add_parser("price", help="run one estimator against fitted artifacts")
    price.add_argument("--estimator", required=True,
                       choices=("standard", "cv", "eep", "multilevel", "lower"))
    price.add_argument("--epsilon", type=float, default=0.125,
                       help="accuracy target for the multilevel schedule")
    sub.add_parser("reference", help="compute the high-accuracy reference price")
    sub.add_parser("sweep", help="run the cost-vs-RMSE sweep and write CSV reports")
    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "fit": cmd_fit,
    "price": cmd_price,
    "reference": cmd_reference,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 4
    except DualcvError as exc:  # pragma: no cover - catch-all for subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
