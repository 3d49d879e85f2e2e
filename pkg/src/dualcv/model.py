"""Discretised asset dynamics, payoff, path simulation and resampling.

The chain moves as ``X_l = step(X_{l-1}, xi_l)`` with i.i.d. standard
normal innovation vectors ``xi_l``.  Each coordinate follows the explicit
one-step update

    x_i * (1 + (r - delta_i) * dt + sigma_i * (A_i . xi) * sqrt(dt)),

where the rows ``A_i`` of the correlation factor have unit norm so the
rotated innovations ``A . xi`` are standard normals with the configured
correlation matrix.  States are never clamped; a negative value is
meaningful arithmetic and the payoff handles it.

Estimators treat the model through a five-member protocol -- ``dim``,
``m``, ``n_dates``, ``spot``, plus ``step``/``innovations`` -- so tests
can substitute toy dynamics (e.g. two-atom innovations) without touching
the estimator code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .streams import StreamKey, standard_normals

_ATOL_CORR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Dynamics of a d-dimensional chain of Euler-stepped GBM coordinates.

    Parameters are annualised: ``rate`` and ``dividends`` per year,
    ``sigmas`` per square-root year.  ``rho`` is the innovation
    correlation matrix; the factor ``A`` is computed internally by
    Cholesky factorisation, so a non-PSD ``rho`` is a configuration
    error.  The step size ``dt`` is always ``horizon / n_dates``.
    """

    dim: int
    rate: float
    dividends: np.ndarray
    sigmas: np.ndarray
    rho: np.ndarray
    spot: np.ndarray
    horizon: float
    n_dates: int
    corr_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        d = int(self.dim)
        if d < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.n_dates < 1:
            raise ConfigError(f"n_dates must be >= 1, got {self.n_dates}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")

        def vec(name, value, positive=False):
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim == 0:
                arr = np.full(d, float(arr))
            if arr.shape != (d,):
                raise ConfigError(f"{name} must have length {d}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} must be finite")
            if positive and not np.all(arr > 0):
                raise ConfigError(f"{name} must be strictly positive")
            arr.flags.writeable = False
            return arr

        object.__setattr__(self, "dividends", vec("dividends", self.dividends))
        object.__setattr__(self, "sigmas", vec("sigmas", self.sigmas))
        if np.any(self.sigmas < 0):
            raise ConfigError("sigmas must be nonnegative")
        object.__setattr__(self, "spot", vec("spot", self.spot, positive=True))

        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.shape != (d, d):
            raise ConfigError(f"rho must be {d}x{d}, got shape {rho.shape}")
        if not np.allclose(rho, rho.T, atol=_ATOL_CORR, rtol=0.0):
            raise ConfigError("rho must be symmetric")
        if np.max(np.abs(np.diag(rho) - 1.0)) > _ATOL_CORR:
            raise ConfigError("rho must have unit diagonal")
        try:
            factor = np.linalg.cholesky(rho)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("rho is not positive definite") from exc
        rho = rho.copy()
        rho.flags.writeable = False
        factor.flags.writeable = False
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "corr_factor", factor)

    @property
    def m(self) -> int:
        """Innovation dimension (equal to the state dimension)."""
        return self.dim

    @property
    def dt(self) -> float:
        return self.horizon / self.n_dates

    @property
    def drift(self) -> np.ndarray:
        """(r - delta_i) * dt per coordinate."""
        return (self.rate - self.dividends) * self.dt

    @property
    def vol_coef(self) -> np.ndarray:
        """sigma_i * sqrt(dt) per coordinate."""
        return self.sigmas * np.sqrt(self.dt)

    def step(self, x: np.ndarray, xi: np.ndarray, date: int) -> np.ndarray:
        return euler_step(self, x, xi, date)

    def innovations(self, key: StreamKey, shape, offset: int = 0) -> np.ndarray:
        return standard_normals(key, shape, offset)


@dataclass(frozen=True)
class Payoff:
    """Max-call payoff: (max_i x_i - strike)^+."""

    strike: float
    kind: str = "max-call"

    def __post_init__(self) -> None:
        if self.kind != "max-call":
            raise ConfigError(f"unsupported payoff kind {self.kind!r}")
        if not np.isfinite(self.strike):
            raise ConfigError("strike must be finite")


def payoff_eval(payoff: Payoff, x: np.ndarray) -> np.ndarray:
    """Evaluate the payoff on a state or a batch of states.

    ``x`` has shape (..., d); the result drops the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(np.max(x, axis=-1) - payoff.strike, 0.0)


def euler_step(spec: ModelSpec, x: np.ndarray, xi: np.ndarray, date: int) -> np.ndarray:
    """One explicit step of the discretised dynamics.

    ``x`` has shape (..., d) and ``xi`` shape (..., m); the leading axes
    broadcast.  Pure arithmetic: no clamping, non-finite values propagate
    to the caller.  ``date`` is accepted for interface symmetry with
    time-inhomogeneous dynamics; the shipped GBM step does not use it.
    """
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    # overflow is legal here: non-finite states propagate to the callers,
    # which abort with a model blow-up diagnostic
    with np.errstate(over="ignore", invalid="ignore"):
        rotated = xi @ spec.corr_factor.T
        growth = 1.0 + spec.drift + spec.vol_coef * rotated
        return x * growth


@dataclass(frozen=True)
class PathBatch:
    """Simulated paths together with the innovations that generated them.

    ``states`` has shape (n, n_dates + 1, d) with ``states[:, 0]`` equal to
    the spot; ``innovations`` has shape (n, n_dates, m).  Replaying the
    step function over the stored innovations reproduces ``states``
    bit-exactly.
    """

    states: np.ndarray
    innovations: np.ndarray
    key: StreamKey

    def __post_init__(self) -> None:
        self.states.flags.writeable = False
        self.innovations.flags.writeable = False

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_dates(self) -> int:
        return self.states.shape[1] - 1

    def replay_states(self, model) -> np.ndarray:
        """Recompute the state array from the stored innovations."""
        out = np.empty_like(self.states)
        out[:, 0] = self.states[:, 0]
        for l in range(1, self.n_dates + 1):
            out[:, l] = model.step(out[:, l - 1], self.innovations[:, l - 1], l)
        return out


def simulate_paths(model, payoff: Payoff, n_paths: int, key: StreamKey,
                   ledger=None) -> PathBatch:
    """Simulate ``n_paths`` full paths from the substream named by ``key``.

    The innovations for date ``l`` come from the key's stream at
    ``date=l``; path ``n`` occupies the contiguous offset block
    ``[n*m, (n+1)*m)`` so the layout does not depend on batch size.
    Raises :class:`NumericalError` if a non-finite state appears.
    """
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    d, m, n_dates = model.dim, model.m, model.n_dates
    states = np.empty((n_paths, n_dates + 1, d))
    innovations = np.empty((n_paths, n_dates, m))
    states[:, 0] = model.spot
    for l in range(1, n_dates + 1):
        xi = model.innovations(key.with_(date=l), (n_paths, m))
        x = model.step(states[:, l - 1], xi, l)
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                f"non-finite state at date {l}: the model blew up "
                f"(check volatilities / step size)"
            )
        innovations[:, l - 1] = xi
        states[:, l] = x
    if ledger is not None:
        ledger.euler_steps += n_paths * n_dates
    return PathBatch(states=states, innovations=innovations, key=key)


def resample_substep(model, x_prev: np.ndarray, date: int, n_sub: int,
                     key: StreamKey, ledger=None):
    """Draw ``n_sub`` one-step successors of a single state ``x_prev``.

    Returns ``(sub_states, sub_innovations)`` of shapes (n_sub, d) and
    (n_sub, m).  The draws sit at offset ``key.path * n_sub * m`` of the
    key's date stream, i.e. exactly the block this path would receive in
    a batched draw of the same size.
    """
    if n_sub < 1:
        raise ConfigError(f"n_sub must be >= 1, got {n_sub}")
    m = model.m
    offset = key.path * n_sub * m
    xi = model.innovations(key.with_(date=date, path=0), (n_sub, m), offset=offset)
    sub = model.step(np.asarray(x_prev, dtype=np.float64), xi, date)
    if not np.all(np.isfinite(sub)):
        raise NumericalError(f"non-finite sub-state at date {date}")
    if ledger is not None:
        ledger.euler_steps += n_sub
        ledger.inner_sims += n_sub
    return sub, xi


def resample_substep_block(model, x_prev: np.ndarray, date: int, n_sub: int,
                           key: StreamKey, first_path: int = 0):
    """Vectorised resampling for a contiguous block of source states.

    ``x_prev`` has shape (B, d) holding the states of paths
    ``first_path .. first_path + B - 1``; the result is the bit-exact
    concatenation of the corresponding :func:`resample_substep` calls,
    with shapes (B, n_sub, d) and (B, n_sub, m).
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    n_block = x_prev.shape[0]
    m = model.m
    offset = first_path * n_sub * m
    xi = model.innovations(key.with_(date=date, path=0), (n_block, n_sub, m),
                           offset=offset)
    sub = model.step(x_prev[:, None, :], xi, date)
    if not np.all(np.isfinite(sub)):
        raise NumericalError(f"non-finite sub-state at date {date}")
    return sub, xi
