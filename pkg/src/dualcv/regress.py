"""Least-squares machinery: lower-bound value functions and the
regression-fitted control variate.

The lower-bound functions come from the Tsitsiklis--Van Roy backward
recursion: the terminal value is the payoff, and at each earlier date the
next date's value is regressed on state features to obtain a continuation
estimate ``C_j``, with ``v_j = max(g_j, C_j)``.

The control variate expands ``v_l(X_l)`` around its one-step conditional
mean in the orthonormal Hermite system of the innovations:

    v_l(X_l) = E[v_l(X_l) | X_{l-1}] + sum_k a_{l,k}(X_{l-1}) phi_k(xi_l),

so each coefficient function ``a_{l,k}(x) = E[v_l(X_l) phi_k(xi_l) |
X_{l-1} = x]`` is a conditional expectation, estimated here by regressing
``v_l(X_l) * phi_k(xi_l)`` on state features of ``X_{l-1}`` over training
paths that carry their innovations.  Subtracting the fitted expansion
inside a nested simulation removes (ideally all of) the one-step
conditional variance without introducing bias, because every ``phi_k``
with k >= 1 has zero mean.  Predictions are clamped to a level ``F``
estimated from the training sweep, since the coefficient functions are
bounded by any bound on ``v``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .basis import (
    HermiteSystem,
    StateBasis,
    block_function_indices,
    hermite_features,
    state_basis_dot,
    state_basis_eval,
)
from .errors import ArtifactError, ConfigError, NumericalError
from .model import PathBatch, Payoff, payoff_eval

# Condition-number threshold beyond which a fit is redone with a small
# ridge term; payoff-in-basis can be collinear with monomials deep in or
# out of the money.
_COND_LIMIT = 1e12
_RIDGE_SCALE = 1e-10

# Safety margin for the truncation level over the empirical value bound.
_TRUNCATION_MARGIN = 1.1

_ARTIFACT_FORMAT = "dualcv-artifacts"
_ARTIFACT_VERSION = 1


def _solve_least_squares(features: np.ndarray, targets: np.ndarray):
    """Minimum-norm least squares with a conditioned-ridge fallback.

    Returns ``(coef, residual_rms, cond, ridge)``.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2:
        raise ConfigError(f"features must be 2-d, got shape {features.shape}")
    n, q = features.shape
    if targets.shape != (n,):
        raise ConfigError(f"targets must have shape ({n},), got {targets.shape}")
    if n < q:
        raise ConfigError(f"need at least {q} observations for {q} features, got {n}")
    if not np.any(features):
        raise ConfigError("feature matrix is identically zero")
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise NumericalError("non-finite values in regression inputs")

    coef, _, _, svals = np.linalg.lstsq(features, targets, rcond=None)
    smin = svals[-1] if len(svals) else 0.0
    cond = float(svals[0] / smin) if smin > 0 else float("inf")
    ridge = 0.0
    if cond > _COND_LIMIT:
        ridge = _RIDGE_SCALE * float(np.mean(np.sum(features * features, axis=1)))
        gram = features.T @ features + ridge * np.eye(q)
        coef = np.linalg.solve(gram, features.T @ targets)
    if not np.all(np.isfinite(coef)):
        raise NumericalError("least-squares solution is non-finite")
    residual = targets - features @ coef
    residual_rms = float(np.sqrt(np.mean(residual * residual)))
    return coef, residual_rms, cond, ridge


@dataclass(frozen=True)
class LinearModel:
    """A fitted linear combination of state-basis features."""

    basis: StateBasis
    coef: np.ndarray
    residual_rms: float
    cond: float
    ridge: float = 0.0

    def __post_init__(self) -> None:
        coef = np.asarray(self.coef, dtype=np.float64)
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)

    def predict(self, payoff: Payoff, x: np.ndarray) -> np.ndarray:
        return state_basis_dot(self.basis, payoff, x, self.coef)


def least_squares_fit(features, targets, basis: StateBasis | None = None) -> LinearModel:
    """Fit a linear model to a prepared (n x Q) feature matrix."""
    coef, residual_rms, cond, ridge = _solve_least_squares(features, targets)
    return LinearModel(basis=basis, coef=coef, residual_rms=residual_rms,
                       cond=cond, ridge=ridge)


@dataclass(frozen=True)
class ValueFunctions:
    """Per-date lower-bound value approximations.

    ``value(J, x)`` is the payoff exactly; for earlier dates it is
    ``max(g_j(x), C_j(x))`` with the fitted continuation model ``C_j``.
    ``bounds[j-1]`` records the largest absolute value seen on the
    training set at date j, used to set control-variate truncation.
    """

    payoff: Payoff
    continuation: tuple  # LinearModel for dates 1..J-1
    bounds: np.ndarray   # per-date training max of |v_j|, dates 1..J
    n_dates: int

    def __post_init__(self) -> None:
        if len(self.continuation) != self.n_dates - 1:
            raise ConfigError("need one continuation model per date 1..J-1")
        bounds = np.asarray(self.bounds, dtype=np.float64)
        bounds.flags.writeable = False
        object.__setattr__(self, "bounds", bounds)

    def continuation_value(self, date: int, x: np.ndarray) -> np.ndarray:
        if not 1 <= date < self.n_dates:
            raise ConfigError(f"no continuation model at date {date}")
        return self.continuation[date - 1].predict(self.payoff, x)

    def value(self, date: int, x: np.ndarray) -> np.ndarray:
        if not 1 <= date <= self.n_dates:
            raise ConfigError(f"date {date} outside 1..{self.n_dates}")
        g = payoff_eval(self.payoff, x)
        if date == self.n_dates:
            return g
        return np.maximum(g, self.continuation_value(date, x))


def fit_lower_bound_tv(training: PathBatch, payoff: Payoff,
                       basis: StateBasis, ledger=None) -> ValueFunctions:
    """Backward-induction value-function fit on a training batch.

    The terminal value is the payoff; at each earlier date the realised
    next-date values are regressed on features of the current state.
    """
    n_dates = training.n_dates
    q = basis.size
    if training.n_paths < q:
        raise ConfigError(
            f"need at least {q} training paths for {q} basis functions, "
            f"got {training.n_paths}"
        )
    states = training.states
    v = payoff_eval(payoff, states[:, n_dates])
    bounds = np.empty(n_dates)
    bounds[n_dates - 1] = np.max(np.abs(v)) if v.size else 0.0
    models: list[LinearModel | None] = [None] * (n_dates - 1)
    for j in range(n_dates - 1, 0, -1):
        feats = state_basis_eval(basis, payoff, states[:, j])
        model = least_squares_fit(feats, v, basis=basis)
        if ledger is not None:
            ledger.basis_evals += training.n_paths
            ledger.regress_flops += training.n_paths * q * q
        cont = feats @ model.coef
        v = np.maximum(payoff_eval(payoff, states[:, j]), cont)
        bounds[j - 1] = np.max(np.abs(v))
        models[j - 1] = model
    return ValueFunctions(payoff=payoff, continuation=tuple(models),
                          bounds=bounds, n_dates=n_dates)


@dataclass(frozen=True)
class CVModel:
    """Fitted control-variate coefficient functions.

    ``models[l-1][i]`` predicts the coefficient of Hermite function
    ``function_indices[i]`` at date ``l``; predictions are clamped to
    ``[-truncation, truncation]`` everywhere they are used.
    """

    basis: StateBasis
    system: HermiteSystem
    n_blocks: int
    function_indices: tuple
    models: tuple        # per date 1..J: tuple of LinearModel per function
    truncation: float
    mode: str = "blocks"

    @property
    def n_dates(self) -> int:
        return len(self.models)

    @property
    def n_functions(self) -> int:
        return len(self.function_indices)

    @cached_property
    def _coef_stacks(self) -> tuple:
        """Per-date (Q, n_functions) coefficient matrices."""
        q = self.basis.size
        return tuple(
            np.stack([m.coef for m in date_models], axis=-1)
            if date_models else np.zeros((q, 0))
            for date_models in self.models
        )

    def coefficient_rows(self, payoff: Payoff, date: int, x: np.ndarray,
                         n_functions: int | None = None) -> np.ndarray:
        """Clamped coefficient predictions, shape (..., n_functions)."""
        if not 1 <= date <= self.n_dates:
            raise ConfigError(f"date {date} outside 1..{self.n_dates}")
        take = self.n_functions if n_functions is None else n_functions
        x = np.asarray(x, dtype=np.float64)
        feats = state_basis_eval(self.basis, payoff, x)
        vals = feats @ self._coef_stacks[date - 1][:, :take]
        return np.clip(vals, -self.truncation, self.truncation)


def cv_function_indices(system: HermiteSystem, count: int, mode: str) -> list[int]:
    """Resolve a truncation count into Hermite function indices.

    ``blocks`` mode takes all functions of total degree 1..count;
    ``scalar`` mode takes the first ``count`` functions of the
    enumeration.
    """
    if mode == "blocks":
        return block_function_indices(system, count)
    if mode == "scalar":
        if count < 0 or count >= system.n_functions:
            raise ConfigError(f"function count {count} outside enumerated range")
        return list(range(1, count + 1))
    raise ConfigError(f"unknown truncation mode {mode!r}")


def fit_cv_coefficients(training: PathBatch, vfun: ValueFunctions,
                        basis: StateBasis, system: HermiteSystem,
                        n_blocks: int, mode: str = "blocks",
                        ledger=None) -> CVModel:
    """Fit all coefficient functions on a training batch with innovations.

    For each date ``l`` and selected Hermite function ``k`` the targets
    are ``v_l(X_l) * phi_k(xi_l)`` and the features are the state basis at
    ``X_{l-1}``.  The truncation level is a 10% margin over the largest
    ``|v_l|`` seen on the training paths.
    """
    indices = cv_function_indices(system, n_blocks, mode)
    n_dates = training.n_dates
    payoff = vfun.payoff
    q = basis.size
    if training.n_paths < q:
        raise ConfigError(
            f"need at least {q} training paths for {q} basis functions, "
            f"got {training.n_paths}"
        )
    value_bound = 0.0
    date_models = []
    for l in range(1, n_dates + 1):
        feats = state_basis_eval(basis, payoff, training.states[:, l - 1])
        phi = hermite_features(system, indices, training.innovations[:, l - 1])
        v_vals = vfun.value(l, training.states[:, l])
        value_bound = max(value_bound, float(np.max(np.abs(v_vals))) if v_vals.size else 0.0)
        if ledger is not None:
            ledger.basis_evals += 2 * training.n_paths  # features + value rows
        fits = []
        for i in range(len(indices)):
            model = least_squares_fit(feats, v_vals * phi[:, i], basis=basis)
            if ledger is not None:
                ledger.regress_flops += training.n_paths * q * q
            fits.append(model)
        date_models.append(tuple(fits))
    return CVModel(basis=basis, system=system, n_blocks=n_blocks,
                   function_indices=tuple(indices), models=tuple(date_models),
                   truncation=_TRUNCATION_MARGIN * value_bound, mode=mode)


def cv_eval(cv: CVModel, payoff: Payoff, date: int, x_prev: np.ndarray,
            xi: np.ndarray, n_functions: int | None = None) -> np.ndarray:
    """Control-variate value ``sum_k clamp(a_k(x_prev)) * phi_k(xi)``.

    ``x_prev`` broadcasts against the leading axes of ``xi``: with
    ``x_prev`` of shape (d,) or (B, d) and ``xi`` of shape (..., m) the
    result has the shape of ``xi`` without its last axis.  Zero selected
    functions give exactly 0.
    """
    take = cv.n_functions if n_functions is None else n_functions
    if take == 0:
        xi = np.asarray(xi)
        shape = xi.shape[:-1] if xi.ndim else ()
        return np.zeros(shape)
    coefs = cv.coefficient_rows(payoff, date, x_prev, take)
    phi = hermite_features(cv.system, cv.function_indices[:take], xi)
    # align coefficient axes with phi's leading axes
    while coefs.ndim < phi.ndim:
        coefs = coefs[..., None, :]
    return np.sum(coefs * phi, axis=-1)


def holdout_variances(paths: PathBatch, vfun: ValueFunctions,
                      cv: CVModel | None = None) -> tuple[float, float]:
    """Per-date variance totals on held-out paths, with and without the CV.

    Returns ``(sum_l Var[v_l(X_l)], sum_l Var[v_l(X_l) - M_l])``; with no
    control variate the two totals are equal.
    """
    payoff = vfun.payoff
    total_raw = 0.0
    total_cv = 0.0
    for l in range(1, paths.n_dates + 1):
        v = vfun.value(l, paths.states[:, l])
        total_raw += float(np.var(v))
        if cv is not None and cv.n_functions:
            m = cv_eval(cv, payoff, l, paths.states[:, l - 1], paths.innovations[:, l - 1])
            total_cv += float(np.var(v - m))
        else:
            total_cv += float(np.var(v))
    return total_raw, total_cv


# ---------------------------------------------------------------------------
# artifact serialisation


def _basis_meta(basis: StateBasis) -> dict:
    return {"dim": basis.dim, "degree": basis.degree,
            "include_payoff": basis.include_payoff}


def save_artifacts(path, payoff: Payoff, vfun: ValueFunctions,
                   cv: CVModel | None = None, fingerprint: dict | None = None) -> None:
    """Write value functions and (optionally) a CV model to one file."""
    meta = {
        "format": _ARTIFACT_FORMAT,
        "version": _ARTIFACT_VERSION,
        "strike": payoff.strike,
        "payoff_kind": payoff.kind,
        "n_dates": vfun.n_dates,
        "has_cv": cv is not None,
        "fingerprint": fingerprint or {},
    }
    arrays = {"vfun_bounds": vfun.bounds}
    if vfun.continuation:
        tv_basis = vfun.continuation[0].basis
        meta["tv_basis"] = _basis_meta(tv_basis)
        arrays["vfun_coefs"] = np.stack([m.coef for m in vfun.continuation])
        arrays["vfun_diag"] = np.array(
            [[m.residual_rms, m.cond, m.ridge] for m in vfun.continuation]
        )
    if cv is not None:
        meta["cv"] = {
            "basis": _basis_meta(cv.basis),
            "m": cv.system.m,
            "max_degree": cv.system.max_degree,
            "n_blocks": cv.n_blocks,
            "mode": cv.mode,
            "truncation": cv.truncation,
            "function_indices": list(cv.function_indices),
        }
        arrays["cv_coefs"] = np.array(
            [[m.coef for m in date_models] for date_models in cv.models]
        )
        arrays["cv_diag"] = np.array(
            [[[m.residual_rms, m.cond, m.ridge] for m in date_models]
             for date_models in cv.models]
        )
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_artifacts(path):
    """Load artifacts written by :func:`save_artifacts`.

    Returns ``(payoff, vfun, cv_or_none, fingerprint)``.  Raises
    :class:`ArtifactError` for unreadable files or version mismatches.
    """
    try:
        with np.load(path) as data:
            arrays = {name: data[name] for name in data.files}
    except FileNotFoundError:
        raise ArtifactError(f"artifact file not found: {path}")
    except Exception as exc:
        raise ArtifactError(f"unreadable artifact file {path}: {exc}") from exc
    try:
        meta = json.loads(bytes(arrays["meta"]).decode("utf-8"))
    except Exception as exc:
        raise ArtifactError(f"artifact {path} has no readable metadata") from exc
    if meta.get("format") != _ARTIFACT_FORMAT:
        raise ArtifactError(f"artifact {path} has unknown format {meta.get('format')!r}")
    if meta.get("version") != _ARTIFACT_VERSION:
        raise ArtifactError(
            f"artifact {path} has version {meta.get('version')!r}; "
            f"this build reads version {_ARTIFACT_VERSION}"
        )
    payoff = Payoff(strike=float(meta["strike"]), kind=meta["payoff_kind"])
    n_dates = int(meta["n_dates"])
    models: list[LinearModel] = []
    if n_dates > 1:
        tb = meta["tv_basis"]
        tv_basis = StateBasis(dim=int(tb["dim"]), degree=int(tb["degree"]),
                              include_payoff=bool(tb["include_payoff"]))
        coefs = arrays["vfun_coefs"]
        diag = arrays["vfun_diag"]
        models = [
            LinearModel(basis=tv_basis, coef=coefs[i], residual_rms=float(diag[i, 0]),
                        cond=float(diag[i, 1]), ridge=float(diag[i, 2]))
            for i in range(coefs.shape[0])
        ]
    vfun = ValueFunctions(payoff=payoff, continuation=tuple(models),
                          bounds=arrays["vfun_bounds"], n_dates=n_dates)
    cv = None
    if meta.get("has_cv"):
        cm = meta["cv"]
        cb = cm["basis"]
        cv_basis = StateBasis(dim=int(cb["dim"]), degree=int(cb["degree"]),
                              include_payoff=bool(cb["include_payoff"]))
        system = HermiteSystem(m=int(cm["m"]), max_degree=int(cm["max_degree"]))
        coefs = arrays["cv_coefs"]
        diag = arrays["cv_diag"]
        date_models = tuple(
            tuple(
                LinearModel(basis=cv_basis, coef=coefs[l, i],
                            residual_rms=float(diag[l, i, 0]),
                            cond=float(diag[l, i, 1]), ridge=float(diag[l, i, 2]))
                for i in range(coefs.shape[1])
            )
            for l in range(coefs.shape[0])
        )
        cv = CVModel(basis=cv_basis, system=system, n_blocks=int(cm["n_blocks"]),
                     function_indices=tuple(int(k) for k in cm["function_indices"]),
                     models=date_models, truncation=float(cm["truncation"]),
                     mode=cm["mode"])
    return payoff, vfun, cv, meta.get("fingerprint", {})
