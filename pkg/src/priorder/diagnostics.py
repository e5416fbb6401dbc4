"""Practical mixing measurement for the adjacent-swap chain.

The diagnostic is the worst-case pairwise-order deviation

    D_t = max_{i != j} | Phat_t(i precedes j) - Pstar(i precedes j) |

between the empirical pairwise matrix of many chains at step t and the
exact stationary matrix from the subset DP.  Deviation is evaluated at
doubling checkpoints 1, 2, 4, ... up to the horizon ``ceil(n^3 ln n)``; the
first checkpoint certified below ``epsilon - guard`` brackets a binary
search, whose probes re-run fresh-seeded chains from the same shared start
to the probe step (values inside the +-guard band never count as crossed).
If no checkpoint crosses, the run reports not-mixed.

All chains of a replicate share one starting permutation (greedy or uniform
random) but use independent move streams; everything is deterministic given
(params, n_chains, seed, init).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log

import numpy as np

from ._util import TAG_INIT, TAG_MOVES, TAG_PROBE, substream
from .errors import SizeLimitError, ValidationError
from .exact import MAX_DP_PLAYERS, dp_pairwise_probs
from .model import OrderParams
from .sampler import _Chains, greedy_init

__all__ = ["empirical_pairwise", "pairwise_deviation", "MixingResult", "practical_mixing_time"]


def empirical_pairwise(orders: np.ndarray) -> np.ndarray:
    """Empirical pairwise-order matrix of a set of orderings (diagonal 0)."""
    orders = np.asarray(orders, dtype=np.int64)
    N, n = orders.shape
    pos = np.empty_like(orders)
    rows = np.arange(N)[:, None]
    pos[rows, orders] = np.arange(n)[None, :]
    P = (pos[:, :, None] < pos[:, None, :]).mean(axis=0)
    np.fill_diagonal(P, 0.0)
    return P


def pairwise_deviation(empirical: np.ndarray, reference: np.ndarray) -> float:
    """Max absolute off-diagonal difference between two pairwise matrices."""
    empirical = np.asarray(empirical, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if empirical.shape != reference.shape or empirical.ndim != 2:
        raise ValidationError(
            f"dimension mismatch: {empirical.shape} vs {reference.shape}"
        )
    diff = np.abs(empirical - reference)
    np.fill_diagonal(diff, 0.0)
    return float(diff.max())


@dataclass
class MixingResult:
    crossing: int | None
    mixed: bool
    curve: list[tuple[int, float]] = field(default_factory=list)
    horizon: int = 0
    init: str = "greedy"

    def __bool__(self) -> bool:
        return self.mixed


def _shared_start(params: OrderParams, init: str, seed: int) -> np.ndarray:
    rng = substream(seed, TAG_INIT)
    if init == "greedy":
        return greedy_init(params, rng)
    if init == "random":
        return rng.permutation(params.n).astype(np.int64)
    raise ValidationError(f"init must be 'greedy' or 'random', got {init!r}")


def _deviation_at(
    params: OrderParams,
    start: np.ndarray,
    n_chains: int,
    steps: int,
    reference: np.ndarray,
    rng_key: tuple[int, ...],
    lazy_prob: float,
) -> float:
    chains = _Chains(
        params,
        np.tile(start, (n_chains, 1)),
        [substream(*rng_key, c) for c in range(n_chains)],
        lazy_prob,
    )
    chains.advance(steps)
    return pairwise_deviation(empirical_pairwise(chains.orders), reference)


def practical_mixing_time(
    params: OrderParams,
    n_chains: int = 1000,
    epsilon: float = 0.25,
    guard: float = 0.02,
    init: str = "greedy",
    seed: int = 0,
    horizon: int | None = None,
    reference: np.ndarray | None = None,
    lazy_prob: float = 0.5,
) -> MixingResult:
    """First step count whose pairwise deviation is certified below
    ``epsilon - guard``, or a not-mixed verdict at the horizon.

    ``reference`` may supply a precomputed stationary pairwise matrix
    (otherwise the DP runs here, so n <= 24).
    """
    n = params.n
    if n > MAX_DP_PLAYERS:
        raise SizeLimitError(f"mixing diagnostic needs the DP reference, n <= {MAX_DP_PLAYERS}")
    if n_chains < 1:
        raise ValidationError("n_chains must be positive")
    if not 0 < epsilon < 1 or guard < 0 or guard >= epsilon:
        raise ValidationError("need 0 < epsilon < 1 and 0 <= guard < epsilon")
    ref = dp_pairwise_probs(params) if reference is None else np.asarray(reference, dtype=float)
    if ref.shape != (n, n):
        raise ValidationError(f"reference matrix has shape {ref.shape}, expected ({n}, {n})")
    T = int(ceil(n**3 * log(n))) if horizon is None else int(horizon)
    start = _shared_start(params, init, seed)
    threshold = epsilon - guard

    # one incremental run over the doubling checkpoints
    checkpoints = []
    t = 1
    while t < T:
        checkpoints.append(t)
        t *= 2
    checkpoints.append(T)
    chains = _Chains(
        params,
        np.tile(start, (n_chains, 1)),
        [substream(seed, TAG_MOVES, c) for c in range(n_chains)],
        lazy_prob,
    )
    curve = []
    at = 0
    hi = None
    lo = 0
    for ck in checkpoints:
        chains.advance(ck - at)
        at = ck
        d = pairwise_deviation(empirical_pairwise(chains.orders), ref)
        curve.append((ck, d))
        if d <= threshold:
            hi = ck
            break
        lo = ck
    if hi is None:
        return MixingResult(None, False, curve, T, init)

    probe = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        d = _deviation_at(params, start, n_chains, mid, ref, (seed, TAG_PROBE, probe), lazy_prob)
        curve.append((mid, d))
        probe += 1
        if d <= threshold:
            hi = mid
        else:
            lo = mid
    curve.sort(key=lambda p: p[0])
    return MixingResult(hi, True, curve, T, init)
