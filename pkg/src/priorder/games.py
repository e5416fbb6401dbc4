"""Coalition utilities: synthetic games, table-backed oracles, caching.

A utility oracle maps a coalition bitmask to a real value, with
``evaluate(0) == 0`` and deterministic repeated calls.  Built-in families:

* sum-of-unanimity: ``U(S) = sum_k c_k * [T_k subseteq S]`` -- rewards the
  *last* member of each designated subset to arrive in an ordering;
* sum-of-race: ``U(S) = sum_k c_k * [T_k intersects S]`` -- rewards the
  *first* member to arrive.

Two scenario constructors produce instances with closed-form target values
(the usual correctness anchors for estimator tests):

* scenario 1: a total order with a common multiplicative precedence weight
  ``w0`` on every pair i < j (converted to additive weights at beta = 1) and
  contiguous-interval unanimity terms; the value of player i in interval
  [l, r] is a lam-weighted softmax with discount ``w0 ** (r - i)``;
* scenario 2: equal-size blocks forming a random DAG, each block internally
  a directed cycle, block-constant lam, and whole-block unanimity terms; by
  cyclic symmetry each member of block B_j is worth exactly ``c_j / |B_j|``.

The four standard regimes ("cases") cross homogeneous/heterogeneous lam with
weak/strong edge weights; generators are fully seeded.

``CachedOracle`` wraps any oracle with a get-or-compute mask store (each
distinct mask computed exactly once, linearizable under threads) plus call
counters, and can persist to / preload from a ``mask,value`` CSV.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from ._util import mask_of, players_of
from .errors import MissingUtilityError, ValidationError
from .model import OrderParams, PriorityGraph, SoftPriority

__all__ = [
    "UtilityOracle",
    "SumOfUnanimityGame",
    "SumOfRaceGame",
    "TableOracle",
    "CachedOracle",
    "table_oracle",
    "wrap_cached",
    "scenario1_closed_form",
    "scenario2_closed_form",
    "ScenarioInstance",
    "scenario1_instance",
    "scenario2_instance",
    "from_spec",
    "load_game",
]


class UtilityOracle:
    """Behavioral interface: ``evaluate(mask) -> float`` over n players."""

    n: int

    def evaluate(self, mask: int) -> float:
        raise NotImplementedError

    def _check_mask(self, mask: int) -> int:
        mask = int(mask)
        if mask < 0 or mask >> self.n:
            raise ValidationError(f"coalition mask {mask} out of range for n={self.n}")
        return mask


def _check_player_count(n: int) -> int:
    # coalition masks are 64-bit throughout
    n = int(n)
    if not 1 <= n <= 64:
        raise ValidationError(f"player count must lie in 1..64, got {n}")
    return n


def _norm_terms(n: int, terms) -> tuple[np.ndarray, np.ndarray]:
    masks, coefs = [], []
    for t, c in terms:
        m = int(t) if isinstance(t, (int, np.integer)) else mask_of(t)
        if m == 0:
            raise ValidationError("game term subsets must be nonempty")
        if m >> n:
            raise ValidationError(f"game term {m} has players out of range for n={n}")
        c = float(c)
        if not c > 0:
            raise ValidationError(f"game term coefficient must be positive, got {c}")
        masks.append(m)
        coefs.append(c)
    return np.array(masks, dtype=np.uint64), np.array(coefs, dtype=float)


class SumOfUnanimityGame(UtilityOracle):
    """U(S) = sum of c_k over terms whose subset is contained in S."""

    def __init__(self, n: int, terms):
        self.n = _check_player_count(n)
        self.term_masks, self.coefs = _norm_terms(self.n, terms)

    def evaluate(self, mask: int) -> float:
        m = np.uint64(self._check_mask(mask))
        return float(self.coefs[(self.term_masks & m) == self.term_masks].sum())


class SumOfRaceGame(UtilityOracle):
    """U(S) = sum of c_k over terms whose subset meets S."""

    def __init__(self, n: int, terms):
        self.n = _check_player_count(n)
        self.term_masks, self.coefs = _norm_terms(self.n, terms)

    def evaluate(self, mask: int) -> float:
        m = np.uint64(self._check_mask(mask))
        return float(self.coefs[(self.term_masks & m) != 0].sum())


class TableOracle(UtilityOracle):
    """Utility backed by an externally computed mask -> value table.

    The table must contain mask 0 with value 0; querying a mask without a
    row raises :class:`MissingUtilityError` naming the mask (the signal of an
    incomplete external table, never silently interpolated).
    """

    def __init__(self, n: int, table: dict[int, float]):
        self.n = _check_player_count(n)
        if 0 not in table:
            raise ValidationError("utility table must contain mask 0 with value 0")
        if table[0] != 0:
            raise ValidationError(f"utility table has U(0)={table[0]}, expected 0")
        self.table = {int(k): float(v) for k, v in table.items()}

    @classmethod
    def from_csv(cls, path, n: int | None = None) -> "TableOracle":
        table: dict[int, float] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#") or line.lower().startswith("mask"):
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 'mask,value', got {line!r}")
                mask = int(parts[0])
                if mask in table:
                    raise ValidationError(f"{path}:{lineno}: duplicate mask {mask}")
                table[mask] = float(parts[1])
        if n is None:
            n = max((int(m).bit_length() for m in table), default=0)
        return cls(n, table)

    def evaluate(self, mask: int) -> float:
        mask = self._check_mask(mask)
        try:
            return self.table[mask]
        except KeyError:
            raise MissingUtilityError(f"no utility row for mask {mask}") from None


def table_oracle(path, n: int | None = None) -> TableOracle:
    """Load a ``mask,value`` CSV utility table."""
    return TableOracle.from_csv(path, n)


class CachedOracle(UtilityOracle):
    """Get-or-compute wrapper: each distinct mask evaluated at most once.

    Thread-safe: concurrent callers of the same missing mask block until the
    single in-flight computation lands.  ``total_calls`` counts every
    evaluate(); ``misses`` counts inner evaluations this session;
    ``distinct_evals`` is the number of stored keys (preloaded rows
    included).  With ``path`` set, rows load at startup and new evaluations
    append immediately.
    """

    def __init__(self, inner: UtilityOracle, path=None):
        self.inner = inner
        self.n = inner.n
        self.path = path
        self._store: dict[int, float] = {}
        self._pending: dict[int, threading.Event] = {}
        self._lock = threading.Lock()
        self.total_calls = 0
        self.misses = 0
        self.preloaded = 0
        self._fh = None
        if path is not None and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    k, v = line.split(",")
                    self._store[int(k)] = float(v)
            self.preloaded = len(self._store)

    @property
    def distinct_evals(self) -> int:
        return len(self._store)

    def evaluate(self, mask: int) -> float:
        mask = self._check_mask(mask)
        while True:
            with self._lock:
                self.total_calls += 1
                if mask in self._store:
                    return self._store[mask]
                ev = self._pending.get(mask)
                if ev is None:
                    ev = threading.Event()
                    self._pending[mask] = ev
                    mine = True
                else:
                    mine = False
            if not mine:
                ev.wait()
                with self._lock:
                    if mask in self._store:
                        return self._store[mask]
                continue  # owner failed; retry ownership
            try:
                value = float(self.inner.evaluate(mask))
            except BaseException:
                with self._lock:
                    self._pending.pop(mask, None)
                    ev.set()
                raise
            with self._lock:
                self._store[mask] = value
                self.misses += 1
                self._pending.pop(mask, None)
                if self.path is not None:
                    if self._fh is None:
                        self._fh = open(self.path, "a", encoding="utf-8")
                    self._fh.write(f"{mask},{value!r}\n")
                    self._fh.flush()
                ev.set()
            return value

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "CachedOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def wrap_cached(oracle: UtilityOracle, path=None) -> CachedOracle:
    return CachedOracle(oracle, path)


def _contiguous(members) -> tuple[int, int]:
    ms = sorted(int(p) for p in members)
    if not ms:
        raise ValidationError("interval must be nonempty")
    if ms != list(range(ms[0], ms[-1] + 1)):
        raise ValidationError(f"non-contiguous interval {members!r}")
    return ms[0], ms[-1]


def scenario1_closed_form(n: int, lam, omega0_mult: float, intervals) -> np.ndarray:
    """Exact values for interval unanimity terms on a common total order.

    ``intervals`` is an iterable of (members, c); each member set must be a
    contiguous index range.  Player i in interval [l, r] collects
    ``c * lam_i * w0**(r - i) / sum_q lam_q * w0**(r - q)``; duplicated
    intervals simply add.
    """
    lam = np.asarray(lam, dtype=float)
    w0 = float(omega0_mult)
    if not 0 < w0 <= 1:
        raise ValidationError(f"omega0_mult must lie in (0, 1], got {w0}")
    psi = np.zeros(n)
    for members, c in intervals:
        lo, hi = _contiguous(members)
        if hi >= n:
            raise ValidationError(f"interval {members!r} out of range for n={n}")
        idx = np.arange(lo, hi + 1)
        weights = lam[idx] * w0 ** (hi - idx)
        psi[idx] += float(c) * weights / weights.sum()
    return psi


def scenario2_closed_form(blocks, coeffs) -> np.ndarray:
    """Exact values for whole-block unanimity terms: c_j / |B_j| per member."""
    blocks = [list(map(int, b)) for b in blocks]
    coeffs = [float(c) for c in coeffs]
    if len(blocks) != len(coeffs):
        raise ValidationError("need one coefficient per block")
    flat = sorted(p for b in blocks for p in b)
    n = len(flat)
    if flat != list(range(n)):
        raise ValidationError("blocks must partition the player set")
    psi = np.zeros(n)
    for b, c in zip(blocks, coeffs):
        if not b:
            raise ValidationError("blocks must be nonempty")
        psi[b] = c / len(b)
    return psi


@dataclass
class ScenarioInstance:
    """A generated benchmark: sampling params, utility, and exact target."""

    params: OrderParams
    game: UtilityOracle
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def _case_regimes(case: int) -> tuple[bool, bool]:
    if case not in (1, 2, 3, 4):
        raise ValidationError(f"case must be 1..4, got {case}")
    heterogeneous_lam = case in (3, 4)
    strong_priority = case in (2, 4)
    return heterogeneous_lam, strong_priority


def scenario1_instance(n: int, case: int, seed: int, num_terms: int | None = None) -> ScenarioInstance:
    """Seeded scenario-1 instance for one of the four standard regimes.

    Total order on 0..n-1 with common multiplicative weight (0.7 weak /
    0.3 strong) converted to additive weights at beta = 1; n^2 contiguous
    intervals drawn uniformly with replacement; coefficients Unif(0.5, 1.5).
    """
    rng = np.random.default_rng(seed)
    het, strong = _case_regimes(case)
    w0 = 0.3 if strong else 0.7
    lam = rng.uniform(1.0, 10.0, size=n) if het else np.ones(n)
    d = n * n if num_terms is None else int(num_terms)
    all_intervals = [(lo, hi) for lo in range(n) for hi in range(lo, n)]
    pick = rng.integers(0, len(all_intervals), size=d)
    coefs = rng.uniform(0.5, 1.5, size=d)
    intervals = [(range(all_intervals[k][0], all_intervals[k][1] + 1), c) for k, c in zip(pick, coefs)]
    omega = np.triu(np.full((n, n), -np.log(w0)), k=1)
    params = OrderParams(PriorityGraph(omega, beta=1.0), SoftPriority(lam))
    game = SumOfUnanimityGame(n, intervals)
    target = scenario1_closed_form(n, lam, w0, intervals)
    return ScenarioInstance(params, game, target, {"scenario": 1, "case": case, "seed": seed, "w0": w0})


def scenario2_instance(
    n: int,
    block_size: int,
    case: int,
    seed: int,
    edge_prob: float = 0.8,
) -> ScenarioInstance:
    """Seeded scenario-2 instance: DAG of equal blocks, each an internal cycle.

    Block pairs (k < l) connect with probability ``edge_prob``; a present
    pair shares one multiplicative weight across all its player pairs, each
    block's cycle shares another.  Weights draw from Unif(0.5, 1) (weak) or
    Unif(0, 0.5) (strong); lam is 1 or block-constant Unif(1, 10);
    coefficients Unif(0.5, 1.5).  Additive conversion at beta = 1.
    """
    if n % block_size != 0:
        raise ValidationError(f"block_size {block_size} must divide n={n}")
    rng = np.random.default_rng(seed)
    het, strong = _case_regimes(case)
    low, high = (0.0, 0.5) if strong else (0.5, 1.0)
    K = n // block_size
    blocks = [list(range(k * block_size, (k + 1) * block_size)) for k in range(K)]
    lam = np.ones(n)
    if het:
        for b in blocks:
            lam[b] = rng.uniform(1.0, 10.0)
    omega = np.zeros((n, n))
    for k in range(K):
        for l in range(k + 1, K):
            if rng.random() < edge_prob:
                w = rng.uniform(low, high)
                omega[np.ix_(blocks[k], blocks[l])] = -np.log(w)
    for k in range(K):
        w = rng.uniform(low, high)
        b = blocks[k]
        for s in range(len(b)):
            omega[b[s], b[(s + 1) % len(b)]] = -np.log(w)
    coeffs = rng.uniform(0.5, 1.5, size=K)
    params = OrderParams(PriorityGraph(omega, beta=1.0), SoftPriority(lam))
    game = SumOfUnanimityGame(n, [(b, c) for b, c in zip(blocks, coeffs)])
    target = scenario2_closed_form(blocks, coeffs)
    return ScenarioInstance(
        params, game, target,
        {"scenario": 2, "case": case, "seed": seed, "blocks": blocks, "coeffs": coeffs.tolist()},
    )


def from_spec(spec: dict, n: int | None = None) -> UtilityOracle:
    """Build a utility oracle from a game-spec object (see README formats)."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValidationError("game spec must be an object with a 'type' field")
    kind = spec["type"]
    if kind in ("sou", "sor"):
        size = int(spec.get("n", n if n is not None else 0))
        terms = [(t["T"], t["c"]) for t in spec["terms"]]
        if size == 0:
            size = max(max(int(p) for p in t) for t, _ in terms) + 1
        cls = SumOfUnanimityGame if kind == "sou" else SumOfRaceGame
        return cls(size, terms)
    if kind == "table":
        return TableOracle.from_csv(spec["path"], n)
    if kind == "scenario1":
        inst = scenario1_instance(int(spec["n"]), int(spec.get("case", 2)), int(spec.get("seed", 0)),
                                  spec.get("num_terms"))
        return inst.game
    if kind == "scenario2":
        inst = scenario2_instance(int(spec["n"]), int(spec["block_size"]), int(spec.get("case", 2)),
                                  int(spec.get("seed", 0)), float(spec.get("edge_prob", 0.8)))
        return inst.game
    raise ValidationError(f"unknown game type {kind!r}")


def load_game(path, n: int | None = None) -> UtilityOracle:
    """Load a game from a JSON spec file or a ``mask,value`` CSV table."""
    if str(path).endswith(".csv"):
        return table_oracle(path, n)
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    return from_spec(spec, n)


def singleton_linear_game(n: int, per_player) -> SumOfUnanimityGame:
    """U(S) = sum of per-player values over members (exactly linear)."""
    vals = np.asarray(per_player, dtype=float)
    return SumOfUnanimityGame(n, [([i], vals[i]) for i in range(n)])


def players_in(mask: int, n: int) -> list[int]:
    """Re-export of the bitmask decoder for callers of this module."""
    return players_of(mask, n)
