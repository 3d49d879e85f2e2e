"""Reproducible random streams built on counter-based Philox generators.

Every random draw in this package is addressed rather than stateful: a
:class:`StreamKey` names a substream (what the numbers are for) and an
integer offset names a position inside it.  Identical ``(key, offset,
count)`` requests return identical values no matter how the surrounding
computation is chunked or parallelised, which is what makes replay checks
and seed-coupled estimator comparisons exact.

Layout: the 64-bit master seed plus a fixed tag form the 128-bit Philox
key; purpose, replication, lane, level and date are packed into the upper
words of the 256-bit Philox counter.  The low counter word is left free
for in-stream addressing (Philox advances one counter unit per block of
four 64-bit outputs, so offsets are resolved as ``advance(offset // 4)``
plus a short discard).

Normal innovations are produced by inverse-CDF transform of open-interval
uniforms, so each normal consumes exactly one 64-bit draw and offsets stay
in one-to-one correspondence with innovation components.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError

# Stream purposes.  Draws with different purposes never collide, which is
# how training, pricing, nested and reference samples stay independent.
TRAINING = "training"
OUTER = "outer"
NESTED = "nested"
REFERENCE = "reference"
REPLICATION = "replication"

PURPOSES = (TRAINING, OUTER, NESTED, REFERENCE, REPLICATION)
_PURPOSE_CODE = {name: i + 1 for i, name in enumerate(PURPOSES)}

# Second Philox key word; separates this package's streams from a plain
# Philox(seed) user with the same seed.
_KEY_TAG = 0x9E3779B97F4A7C15

# Lane values reserved by the harness so that reference computations and
# the shared lower-bound fit never share streams with sweep runs.
REFERENCE_LANE = 0xFFFF
TV_TRAINING_LANE = 0xFFFE

_U64 = np.uint64
_TWO53_INV = 2.0 ** -53


@dataclass(frozen=True)
class StreamKey:
    """Identity of one random substream.

    ``purpose`` separates the major sampling roles, ``replication`` the
    macro-replication, ``lane`` the harness context (e.g. one point of an
    epsilon sweep), ``level`` the multilevel refinement level and ``date``
    the exercise date.  ``path`` is not part of the generator state: a
    path owns the fixed offset block ``path * draws_per_path`` inside its
    (purpose, replication, lane, level, date) stream, so per-path and
    batched generation produce bit-identical numbers.
    """

    seed: int
    purpose: str = REPLICATION
    replication: int = 0
    lane: int = 0
    level: int = 0
    path: int = 0
    date: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.purpose not in _PURPOSE_CODE:
            raise ConfigError(f"unknown stream purpose {self.purpose!r}")
        if not 0 <= self.replication < 2**32:
            raise ConfigError(f"replication index out of range: {self.replication}")
        if not 0 <= self.lane < 2**16:
            raise ConfigError(f"lane out of range: {self.lane}")
        if not 0 <= self.level < 2**8:
            raise ConfigError(f"level out of range: {self.level}")
        if not 0 <= self.path < 2**48:
            raise ConfigError(f"path index out of range: {self.path}")
        if not 0 <= self.date < 2**64:
            raise ConfigError(f"date index out of range: {self.date}")

    def with_(self, **changes) -> "StreamKey":
        """Return a copy with the given fields replaced."""
        return replace(self, **changes)


def _bit_generator(key: StreamKey) -> np.random.Philox:
    # key.path deliberately does not enter the generator state: a path is a
    # fixed offset block within its (purpose, replication, lane, level,
    # date) stream, so batched and per-path generation coincide bitwise.
    word = (
        (_PURPOSE_CODE[key.purpose] << 56)
        | (key.replication << 24)
        | (key.lane << 8)
        | key.level
    )
    counter = np.array([0, 0, key.date, word], dtype=_U64)
    philox_key = np.array([key.seed, _KEY_TAG], dtype=_U64)
    return np.random.Philox(counter=counter, key=philox_key)


def raw_uint64(key: StreamKey, count: int, offset: int = 0) -> np.ndarray:
    """Return ``count`` raw 64-bit words at ``offset`` in the substream."""
    if count < 0 or offset < 0:
        raise ConfigError("count and offset must be nonnegative")
    bg = _bit_generator(key)
    blocks, lead = divmod(offset, 4)
    if blocks:
        bg.advance(blocks)
    if count == 0:
        return np.empty(0, dtype=_U64)
    out = bg.random_raw(lead + count)
    return out[lead:] if lead else out


def uniform_open(key: StreamKey, count: int, offset: int = 0) -> np.ndarray:
    """Uniforms strictly inside (0, 1): 53 significant bits, half-shifted."""
    raw = raw_uint64(key, count, offset)
    return ((raw >> _U64(11)).astype(np.float64) + 0.5) * _TWO53_INV


def standard_normals(key: StreamKey, shape, offset: int = 0) -> np.ndarray:
    """Standard normal draws via inverse CDF; one 64-bit word per value."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    count = 1
    for s in shape:
        count *= int(s)
    return ndtri(uniform_open(key, count, offset)).reshape(shape)
