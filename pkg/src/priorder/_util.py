"""Small shared helpers: bitmask subsets, masked log-sum-exp, seeded streams.

Subsets of the player set are encoded as integer bitmasks (bit ``i`` set means
player ``i`` is a member).  Python ints are used wherever masks are dict keys
so that ``n`` up to 64 is safe; numpy arrays of masks use ``uint64``.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

_U64 = (1 << 64) - 1


def mask_of(players: Iterable[int]) -> int:
    """Bitmask of an iterable of player indices."""
    m = 0
    for p in players:
        m |= 1 << int(p)
    return m


def players_of(mask: int, n: int) -> list[int]:
    """Sorted list of player indices in a bitmask."""
    return [i for i in range(n) if (mask >> i) & 1]


def masked_logsumexp(scores: np.ndarray, mask: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(scores))) over entries where ``mask`` is True.

    Rows whose mask is empty yield -inf.  Stable under large negative scores
    (per-row max subtraction).
    """
    neg = np.where(mask, scores, -np.inf)
    m = np.max(neg, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(neg - m_safe), axis=axis)
    with np.errstate(divide="ignore"):
        out = np.squeeze(m_safe, axis=axis) + np.log(s)
    return out


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic named random stream.

    All randomness in the package flows through this: a component asking for
    a stream passes its root seed plus small integer tags, and the generator
    is ``np.random.default_rng([seed, *tags])``.  Identical (seed, tags) give
    identical streams regardless of what other components do.
    """
    return np.random.default_rng([int(seed) & _U64, *[int(k) & _U64 for k in key]])


def mix_seed(seed: int, *parts: int) -> int:
    """Fold extra integers into a seed, returning a plain 63-bit int.

    Used where an API only accepts a scalar seed (e.g. per-setting chain
    configs inside a sweep).
    """
    ss = np.random.SeedSequence([int(seed) & _U64, *[int(p) & _U64 for p in parts]])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


# Stream tags (documented so runs can be reproduced piecemeal).
TAG_INIT = 1      # chain starting permutation
TAG_MOVES = 2     # MH proposal/acceptance draws
TAG_EXACT = 3     # direct draws at beta == 0
TAG_PROBE = 4     # mixing-time binary-search probes
TAG_SWEEP = 5     # per-setting sampling inside a sweep
TAG_MISC = 9
