"""Exact small-instance oracles: enumeration, subset DP, normalizer.

Enumeration materializes all n! orderings (hard limit n <= 10) and supports
both the normalized pmf and exact values of a utility oracle.  The pairwise
dynamic program runs over all 2^n subsets (hard limit n <= 24, and the dense
stage table needs about ``n * 2^n`` floats, so the top of that range wants
several GB) and yields the stationary probability that i precedes j.

The DP recurrences accumulate, for every subset S, a forward mass A(S) over
prefixes and a backward mass B(S) over completions, glued by the stage factor

    l(i; S) = lam_i * w_i^S * (sum_k w_k^S) / (sum_k lam_k w_k^S),

where ``w_k^S = exp(-beta * V(k; S))``.  A([n]) is the normalizer.  All
sums are taken after per-subset max subtraction in the log domain, which
plays the role of per-cardinality rescaling and keeps beta * omega up to ~50
finite.  Complementary pairs are always rescaled to sum to one at the end;
the worst pre-rescaling drift is available as a diagnostic.
"""

from __future__ import annotations

import itertools

import numpy as np

from ._util import masked_logsumexp
from .errors import SizeLimitError
from .model import OrderParams, log_unnormalized_pmf_batch
from .games import UtilityOracle

__all__ = [
    "MAX_ENUM_PLAYERS",
    "MAX_DP_PLAYERS",
    "enumerate_pmf",
    "exact_value",
    "dp_pairwise_probs",
    "dp_normalizer",
]

MAX_ENUM_PLAYERS = 10
MAX_DP_PLAYERS = 24


def _all_orders(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def _guard_enum(n: int) -> None:
    if n > MAX_ENUM_PLAYERS:
        raise SizeLimitError(f"enumeration supports n <= {MAX_ENUM_PLAYERS}, got n={n}")


def _guard_dp(n: int) -> None:
    if n > MAX_DP_PLAYERS:
        raise SizeLimitError(f"subset DP supports n <= {MAX_DP_PLAYERS}, got n={n}")


def enumerate_pmf(params: OrderParams) -> dict[tuple[int, ...], float]:
    """Normalized probability of every ordering, by brute force."""
    n = params.n
    _guard_enum(n)
    orders = _all_orders(n)
    logs = log_unnormalized_pmf_batch(params, orders)
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    return {tuple(int(x) for x in row): float(p) for row, p in zip(orders, probs)}


def exact_value(params: OrderParams, oracle: UtilityOracle) -> np.ndarray:
    """Exact expected marginal contributions under the order distribution.

    Sums to ``U(full) - U(empty)`` by telescoping.  Every subset is a prefix
    of some ordering, so all 2^n utilities are evaluated (once).
    """
    n = params.n
    _guard_enum(n)
    if oracle.n != n:
        raise SizeLimitError(f"oracle has n={oracle.n}, params have n={n}")
    orders = _all_orders(n)
    logs = log_unnormalized_pmf_batch(params, orders)
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    util = np.array([oracle.evaluate(m) for m in range(1 << n)])
    masks = np.zeros((orders.shape[0], n + 1), dtype=np.int64)
    for t in range(n):
        masks[:, t + 1] = masks[:, t] | (1 << orders[:, t])
    deltas = util[masks[:, 1:]] - util[masks[:, :-1]]
    psi = np.zeros(n)
    np.add.at(psi, orders.ravel(), (probs[:, None] * deltas).ravel())
    return psi


def _stage_log_table(params: OrderParams) -> tuple[np.ndarray, np.ndarray]:
    """(log l(i; S) for all subsets S x players i, membership bit table).

    Entries for i not in S are junk (never read).  Built incrementally over
    masks by lowest set bit: V(i; S) = V(i; S minus lowbit) + omega[i, lowbit].
    """
    n = params.n
    size = 1 << n
    omega = params.graph.omega
    beta = params.graph.beta
    loglam = np.log(params.soft.lam)
    V = np.zeros((size, n))
    for j in range(n - 1, -1, -1):
        m = (np.arange(1 << (n - j - 1), dtype=np.int64) << (j + 1)) | (1 << j)
        V[m] = V[m ^ (1 << j)] + omega[:, j][None, :]
    bits = ((np.arange(size, dtype=np.int64)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    neg = -beta * V
    log_state = masked_logsumexp(neg, bits)
    log_mu = masked_logsumexp(loglam[None, :] + neg, bits)
    log_l = loglam[None, :] + neg
    log_l[1:] += (log_state[1:] - log_mu[1:])[:, None]  # row 0 (empty set) is never a stage
    return log_l, bits


def _forward(log_l: np.ndarray, bits: np.ndarray, n: int) -> np.ndarray:
    size = 1 << n
    card = np.zeros(size, dtype=np.int64)
    for j in range(n):
        card += (np.arange(size) >> j) & 1
    log_a = np.full(size, -np.inf)
    log_a[0] = 0.0
    bit_cols = (1 << np.arange(n, dtype=np.int64))[None, :]
    for c in range(1, n + 1):
        layer = np.flatnonzero(card == c)
        prev = layer[:, None] ^ bit_cols  # S minus {i} where i in S (junk elsewhere)
        terms = log_a[prev] + log_l[layer]
        log_a[layer] = masked_logsumexp(terms, bits[layer])
    return log_a


def _backward(log_l: np.ndarray, bits: np.ndarray, n: int) -> np.ndarray:
    size = 1 << n
    card = np.zeros(size, dtype=np.int64)
    for j in range(n):
        card += (np.arange(size) >> j) & 1
    log_b = np.full(size, -np.inf)
    log_b[size - 1] = 0.0
    bit_cols = (1 << np.arange(n, dtype=np.int64))[None, :]
    for c in range(n - 1, -1, -1):
        layer = np.flatnonzero(card == c)
        grown = layer[:, None] | bit_cols  # S plus {k} for k not in S (self elsewhere)
        terms = log_l[grown, np.arange(n)[None, :]] + log_b[grown]
        log_b[layer] = masked_logsumexp(terms, ~bits[layer])
    return log_b


def dp_normalizer(params: OrderParams) -> float:
    """log of the total unnormalized mass over all orderings."""
    n = params.n
    _guard_dp(n)
    log_l, bits = _stage_log_table(params)
    return float(_forward(log_l, bits, n)[(1 << n) - 1])


def dp_pairwise_probs(params: OrderParams, with_asymmetry: bool = False):
    """Stationary pairwise-order matrix: entry (i, j) is P(i precedes j).

    Diagonal zero; complementary pairs rescaled to sum to one.  With
    ``with_asymmetry=True`` also returns the worst |P[i,j]+P[j,i]-1| observed
    before that rescaling.
    """
    n = params.n
    _guard_dp(n)
    size = 1 << n
    log_l, bits = _stage_log_table(params)
    log_a = _forward(log_l, bits, n)
    log_b = _backward(log_l, bits, n)
    log_z = log_a[size - 1]
    P = np.zeros((n, n))
    masks = np.arange(size, dtype=np.int64)
    for j in range(n):
        without = np.flatnonzero(~bits[:, j])
        grown = masks[without] | (1 << j)
        contrib = np.exp(log_a[without] + log_l[grown, j] + log_b[grown] - log_z)
        # P[i, j] accumulates the mass of prefixes containing i at j's insertion
        P[:, j] = bits[without].T @ contrib
    np.fill_diagonal(P, 0.0)
    iu, ju = np.triu_indices(n, k=1)
    pair_sums = P[iu, ju] + P[ju, iu]
    asym = float(np.abs(pair_sums - 1.0).max()) if pair_sums.size else 0.0
    with np.errstate(invalid="ignore"):
        P[iu, ju] = P[iu, ju] / pair_sums
        P[ju, iu] = 1.0 - P[iu, ju]
    if with_asymmetry:
        return P, asym
    return P
