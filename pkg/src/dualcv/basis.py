"""Regression bases: state-space monomials and normalised Hermite systems.

The state basis is the set of monomials of total degree up to a cap,
optionally followed by the payoff as a final feature.  The innovation
basis is the orthonormal system of normalised Hermite polynomials under
the standard normal law; in several dimensions the functions are products
of univariate ones, enumerated in blocks of equal total degree (see
:func:`hermite_block`).  A truncation level ``K`` counts those blocks, so
``K=1`` in dimension ``m`` means all ``m`` degree-one functions; a scalar
reading (first ``K`` functions of the enumeration) is available where the
blockwise interpretation is not wanted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .model import Payoff, payoff_eval


def degree_indices(m: int, degree: int) -> list[tuple[int, ...]]:
    """Multi-indices in ``m`` variables of total degree exactly ``degree``.

    Ordered lexicographically with the first coordinate weighted highest,
    e.g. ``m=2, degree=1`` gives ``[(1, 0), (0, 1)]``.
    """
    if m == 1:
        return [(degree,)]
    out = []
    for first in range(degree, -1, -1):
        out.extend((first,) + rest for rest in degree_indices(m - 1, degree - first))
    return out


def n_degree_indices(m: int, degree: int) -> int:
    """Count of multi-indices of total degree ``degree``: C(m+degree-1, degree)."""
    return math.comb(m + degree - 1, degree)


@dataclass(frozen=True)
class StateBasis:
    """Monomials of total degree <= ``degree``, optionally plus the payoff.

    The feature vector starts with the constant 1, continues through the
    degree blocks in enumeration order and, when ``include_payoff`` is
    set, ends with the payoff value.
    """

    dim: int
    degree: int = 1
    include_payoff: bool = True

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.degree < 0:
            raise ConfigError(f"degree must be >= 0, got {self.degree}")

    @cached_property
    def exponents(self) -> tuple[tuple[int, ...], ...]:
        out = []
        for b in range(self.degree + 1):
            out.extend(degree_indices(self.dim, b))
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.exponents) + (1 if self.include_payoff else 0)


def _monomial(x: np.ndarray, expo: tuple[int, ...], pow_cache: dict) -> np.ndarray | None:
    """Product of coordinate powers; None stands for the constant 1."""
    term = None
    for c, e in enumerate(expo):
        if e == 0:
            continue
        p = pow_cache.get((c, e))
        if p is None:
            p = x[..., c] if e == 1 else x[..., c] ** e
            pow_cache[(c, e)] = p
        term = p if term is None else term * p
    return term


def state_basis_eval(basis: StateBasis, payoff: Payoff, x: np.ndarray) -> np.ndarray:
    """Feature matrix of shape (..., Q); the first column is the constant 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.dim:
        raise ConfigError(f"state has dimension {x.shape[-1]}, basis expects {basis.dim}")
    cols = []
    pow_cache: dict = {}
    for expo in basis.exponents:
        term = _monomial(x, expo, pow_cache)
        cols.append(np.ones(x.shape[:-1]) if term is None else term)
    if basis.include_payoff:
        cols.append(payoff_eval(payoff, x))
    return np.stack(cols, axis=-1)


def state_basis_dot(basis: StateBasis, payoff: Payoff, x: np.ndarray,
                    coef: np.ndarray) -> np.ndarray:
    """Evaluate ``features(x) @ coef`` without materialising the features.

    Used in the nested sampling hot path where the feature matrix of a
    (paths x subsamples) block would dominate memory traffic.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[:-1])
    pow_cache: dict = {}
    for i, expo in enumerate(basis.exponents):
        c = coef[i]
        if c == 0.0:
            continue
        term = _monomial(x, expo, pow_cache)
        if term is None:
            out += c
        else:
            out += c * term
    if basis.include_payoff and coef[-1] != 0.0:
        out += coef[-1] * payoff_eval(payoff, x)
    return out


@dataclass(frozen=True)
class HermiteSystem:
    """Orthonormal Hermite functions for m-dimensional standard normals.

    Function 0 is the constant 1.  Functions with index >= 1 are products
    of univariate normalised Hermite polynomials ``H_k / sqrt(k!)``,
    enumerated blockwise by total degree and lexicographically within a
    block.  ``max_degree`` caps the enumerated blocks.
    """

    m: int
    max_degree: int = 16

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.max_degree < 1:
            raise ConfigError(f"max_degree must be >= 1, got {self.max_degree}")

    @cached_property
    def multi_indices(self) -> tuple[tuple[int, ...], ...]:
        out = [(0,) * self.m]
        for b in range(1, self.max_degree + 1):
            out.extend(degree_indices(self.m, b))
        return tuple(out)

    @cached_property
    def _block_starts(self) -> tuple[int, ...]:
        starts = [0, 1]
        for b in range(1, self.max_degree + 1):
            starts.append(starts[-1] + n_degree_indices(self.m, b))
        return tuple(starts)

    @property
    def n_functions(self) -> int:
        return len(self.multi_indices)


def hermite_block(system: HermiteSystem, block: int) -> list[int]:
    """Function indices of total degree exactly ``block`` (block >= 1)."""
    if block < 1 or block > system.max_degree:
        raise IndexError(f"block {block} outside enumerated range 1..{system.max_degree}")
    starts = system._block_starts
    return list(range(starts[block], starts[block + 1]))


def block_function_indices(system: HermiteSystem, n_blocks: int) -> list[int]:
    """Function indices of all blocks 1..n_blocks, in enumeration order."""
    if n_blocks < 0 or n_blocks > system.max_degree:
        raise ConfigError(
            f"block count {n_blocks} outside enumerated range 0..{system.max_degree}"
        )
    starts = system._block_starts
    return list(range(1, starts[n_blocks + 1])) if n_blocks else []


def hermite_univariate(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Normalised Hermite values, shape (..., max_degree + 1).

    Three-term recurrence in normalised form,
    ``phi_{k+1} = (x * phi_k - sqrt(k) * phi_{k-1}) / sqrt(k+1)``,
    which is numerically stable and keeps every column unit-norm under
    the standard normal law.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for k in range(1, max_degree):
        out[..., k + 1] = (x * out[..., k] - math.sqrt(k) * out[..., k - 1]) / math.sqrt(k + 1)
    return out


def _as_innovations(system: HermiteSystem, xi) -> np.ndarray:
    """Coerce ``xi`` to shape (..., m); scalars are allowed when m == 1."""
    xi = np.asarray(xi, dtype=np.float64)
    if system.m == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if xi.ndim == 0 or xi.shape[-1] != system.m:
        raise ConfigError(f"innovation has shape {xi.shape}, system expects (..., {system.m})")
    return xi


def hermite_eval(system: HermiteSystem, k: int, xi: np.ndarray) -> np.ndarray:
    """Value of function ``k`` at innovation(s) ``xi`` of shape (..., m)."""
    if not 0 <= k < system.n_functions:
        raise IndexError(f"function index {k} outside enumerated range")
    xi = _as_innovations(system, xi)
    alpha = system.multi_indices[k]
    table = hermite_univariate(xi, max(alpha))
    out = np.ones(xi.shape[:-1])
    for c, a in enumerate(alpha):
        if a:
            out = out * table[..., c, a]
    return out


def hermite_features(system: HermiteSystem, function_indices, xi: np.ndarray) -> np.ndarray:
    """Feature matrix of the selected functions, shape (..., len(indices))."""
    xi = _as_innovations(system, xi)
    indices = list(function_indices)
    if not indices:
        return np.zeros(xi.shape[:-1] + (0,))
    alphas = [system.multi_indices[k] for k in indices]
    table = hermite_univariate(xi, max(max(a) for a in alphas))
    cols = []
    for alpha in alphas:
        col = None
        for c, a in enumerate(alpha):
            if a:
                v = table[..., c, a]
                col = v if col is None else col * v
        cols.append(np.ones(xi.shape[:-1]) if col is None else col)
    return np.stack(cols, axis=-1)
