"""Priority data model and the permutation log-probability.

Players are ``0..n-1``.  Two kinds of priority enter the order distribution:

* a weighted directed graph ``omega`` where ``omega[i, j] >= 0`` is the
  strength of "i should precede j" (both directions may be positive, cycles
  are allowed), scaled by a temperature ``beta >= 0``;
* per-player soft priorities ``lam`` (strictly positive), which bias who is
  drawn late in the order without forbidding anything.

An ordering ``pi`` is a sequence of all n players; ``pi[t]`` is the player at
forward position ``t`` and the prefix set at stage ``t`` is
``S_t = {pi[0], ..., pi[t]}``.  Placing player ``k`` last within a set ``S``
costs the stage violation ``V(k; S) = sum_{j in S} omega[k, j]``; summing the
stage violations along a permutation telescopes to its total violation
(the weight of all edges it reverses).

The unnormalized probability of ``pi`` is a stage-wise product of

* a choice factor: a lam-weighted softmax over ``S_t`` with per-player
  discount ``exp(-beta * V(k; S_t))``, evaluated at ``pi[t]``, and
* a state factor: ``sum_{k in S_t} exp(-beta * V(k; S_t))``.

Everything here is computed in the log domain with per-stage max subtraction
so temperatures up to ``beta * omega ~ 50`` stay finite.

Subsets are integer bitmasks (bit ``i`` = player ``i``); all modules share
this encoding.  Types are immutable after validation and every operation is
pure, so values can be shared freely across workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ._util import mask_of, masked_logsumexp, players_of
from .errors import ValidationError

__all__ = [
    "PriorityGraph",
    "SoftPriority",
    "OrderParams",
    "validate",
    "stage_violation",
    "total_violation",
    "log_unnormalized_pmf",
    "log_unnormalized_pmf_batch",
    "stage_factors",
    "multiplicative_weights",
    "fingerprint",
    "load_params",
    "dump_params",
    "check_permutation",
]


@dataclass(frozen=True)
class PriorityGraph:
    """Weighted pairwise-priority matrix with temperature.

    ``omega[i, j]`` is the additive strength of "i should precede j";
    the diagonal must be zero and all entries non-negative.  ``omega[i, j]``
    and ``omega[j, i]`` may both be positive (head-to-head records), and the
    induced directed graph may contain cycles.
    """

    omega: np.ndarray
    beta: float

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float)
        if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
            raise ValidationError(f"omega must be square, got shape {omega.shape}")
        if omega.shape[0] < 1:
            raise ValidationError("need at least one player")
        bad = np.argwhere(~np.isfinite(omega))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"non-finite edge weight at omega[{i},{j}]")
        bad = np.argwhere(omega < 0)
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"negative edge weight at omega[{i},{j}]")
        diag = np.flatnonzero(np.diagonal(omega) != 0)
        if diag.size:
            i = diag[0]
            raise ValidationError(f"nonzero diagonal at omega[{i},{i}]")
        beta = float(self.beta)
        if not np.isfinite(beta) or beta < 0:
            raise ValidationError(f"beta must be a finite non-negative real, got {beta}")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "beta", beta)

    @property
    def n(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class SoftPriority:
    """Strictly positive per-player weights.

    The latent form (non-negative scores ``z`` with temperature ``alpha``)
    is expanded eagerly to ``lam = exp(-alpha * z)`` at construction;
    downstream code only ever sees ``lam``.
    """

    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 1:
            raise ValidationError(f"lambda must be a vector, got shape {lam.shape}")
        bad = np.flatnonzero(~(np.isfinite(lam) & (lam > 0)))
        if bad.size:
            i = bad[0]
            raise ValidationError(f"non-positive soft priority at index {i} (lambda[{i}]={lam[i]})")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def from_latent(cls, z, alpha: float) -> "SoftPriority":
        z = np.asarray(z, dtype=float)
        if np.any(~np.isfinite(z)) or np.any(z < 0):
            raise ValidationError("latent scores z must be finite and non-negative")
        alpha = float(alpha)
        if not np.isfinite(alpha) or alpha < 0:
            raise ValidationError(f"alpha must be a finite non-negative real, got {alpha}")
        return cls(np.exp(-alpha * z))

    @classmethod
    def uniform(cls, n: int) -> "SoftPriority":
        return cls(np.ones(n))

    @property
    def n(self) -> int:
        return self.lam.shape[0]


@dataclass(frozen=True)
class OrderParams:
    """A complete specification of the order distribution: graph + soft weights."""

    graph: PriorityGraph
    soft: SoftPriority

    def __post_init__(self):
        if self.graph.n != self.soft.n:
            raise ValidationError(
                f"dimension mismatch: graph has n={self.graph.n}, soft priority has n={self.soft.n}"
            )

    @property
    def n(self) -> int:
        return self.graph.n


def validate(params: OrderParams) -> OrderParams:
    """Re-run all invariant checks on an existing parameter object.

    Construction already validates; this is for callers holding objects of
    unknown provenance (e.g. after unpickling).
    """
    PriorityGraph(params.graph.omega, params.graph.beta)
    SoftPriority(params.soft.lam)
    if params.graph.n != params.soft.n:
        raise ValidationError("dimension mismatch between graph and soft priority")
    return params


def check_permutation(order, n: int) -> np.ndarray:
    """Validate and return an ordering as an int64 array of length n."""
    arr = np.asarray(order, dtype=np.int64)
    if arr.shape != (n,) or np.any(np.sort(arr) != np.arange(n)):
        raise ValidationError(f"not a permutation of 0..{n - 1}: {order!r}")
    return arr


def _graph_of(obj) -> PriorityGraph:
    return obj.graph if isinstance(obj, OrderParams) else obj


def stage_violation(params, k: int, subset: int) -> float:
    """Violation cost of placing player ``k`` last within the bitmask ``subset``.

    Equals ``sum_{j in subset} omega[k, j]``; the zero diagonal means
    membership of ``k`` itself does not change the value.
    """
    graph = _graph_of(params)
    if not 0 <= k < graph.n:
        raise ValidationError(f"player {k} out of range [0, {graph.n})")
    members = players_of(int(subset), graph.n)
    return float(graph.omega[k, members].sum())


def total_violation(params, order) -> float:
    """Total weight of priority edges reversed by an ordering."""
    graph = _graph_of(params)
    order = check_permutation(order, graph.n)
    pos = np.empty(graph.n, dtype=np.int64)
    pos[order] = np.arange(graph.n)
    # edge (i, j) is violated iff j appears before i
    reversed_pairs = pos[:, None] > pos[None, :]
    return float(graph.omega[reversed_pairs].sum())


def log_unnormalized_pmf_batch(params: OrderParams, orders) -> np.ndarray:
    """Log unnormalized probability for a batch of orderings.

    ``orders`` is an (R, n) integer array, one permutation per row.  Each
    stage contributes ``log choice + log state`` computed with masked
    log-sum-exp over the prefix.  Exponentiated differences of the returned
    values are exact probability ratios.
    """
    graph = _graph_of(params)
    lam = params.soft.lam
    n = graph.n
    orders = np.atleast_2d(np.asarray(orders, dtype=np.int64))
    if orders.shape[1] != n:
        raise ValidationError(f"orderings have length {orders.shape[1]}, expected {n}")
    R = orders.shape[0]
    rows = np.arange(R)
    loglam = np.log(lam)
    beta = graph.beta
    member = np.zeros((R, n), dtype=bool)
    memberf = np.zeros((R, n))
    out = np.zeros(R)
    for t in range(n):
        pick = orders[:, t]
        member[rows, pick] = True
        memberf[rows, pick] = 1.0
        # V[r, k] = sum_{j in prefix_r} omega[k, j]
        V = memberf @ graph.omega.T
        scores = loglam[None, :] - beta * V
        out += (
            scores[rows, pick]
            - masked_logsumexp(scores, member)
            + masked_logsumexp(-beta * V, member)
        )
    return out


def log_unnormalized_pmf(params: OrderParams, order) -> float:
    """Log unnormalized probability of one ordering."""
    order = check_permutation(order, params.n)
    return float(log_unnormalized_pmf_batch(params, order[None, :])[0])


def stage_factors(params: OrderParams, i: int, subset: int) -> tuple[float, float]:
    """Stage-wise (choice, state) factors of player ``i`` within ``subset``.

    ``choice`` is the conditional probability of drawing ``i`` as the last
    element of ``subset`` (a lam-weighted softmax with violation discounts;
    sums to one over the members).  ``state`` is the prefix rescaling factor
    ``sum_k exp(-beta * V(k; subset))``.  The log pmf of an ordering equals
    the sum over stages of ``log state + log choice``.
    """
    graph = _graph_of(params)
    subset = int(subset)
    members = players_of(subset, graph.n)
    if not members:
        raise ValidationError("subset must be nonempty")
    if not (subset >> i) & 1:
        raise ValidationError(f"player {i} not in subset mask {subset}")
    sub = graph.omega[np.ix_(members, members)]
    V = sub.sum(axis=1)
    scores = np.log(params.soft.lam[members]) - graph.beta * V
    shifted = np.exp(scores - scores.max())
    choice = float(shifted[members.index(i)] / shifted.sum())
    state = float(np.exp(-graph.beta * V).sum())
    return choice, state


def multiplicative_weights(graph: PriorityGraph) -> np.ndarray:
    """Entrywise multiplicative view ``exp(-beta * omega)``.

    Non-edges and the diagonal map to 1; hard priorities push toward 0.
    The temperature is absorbed, so this is a derived view only.
    """
    return np.exp(-graph.beta * graph.omega)


def fingerprint(params: OrderParams) -> str:
    """Short stable hash of a parameter object, used to tag sample batches."""
    h = hashlib.sha256()
    h.update(np.int64(params.n).tobytes())
    h.update(np.float64(params.graph.beta).tobytes())
    h.update(np.ascontiguousarray(params.graph.omega).tobytes())
    h.update(np.ascontiguousarray(params.soft.lam).tobytes())
    return h.hexdigest()[:16]


def load_params(path) -> OrderParams:
    """Read a parameter file (JSON).

    Schema: object with ``n`` (int), ``edges`` (array of ``[i, j, w]``
    triples; repeated pairs add), ``beta`` (number), and exactly one of
    ``lambda`` (array of n positive numbers) or ``latent`` (object
    ``{"z": [...], "alpha": a}``).  Unlisted pairs have weight zero.
    """
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValidationError("graph file must contain a JSON object")
    try:
        n = int(obj["n"])
        edges = obj.get("edges", [])
        beta = float(obj["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"graph file missing/invalid field: {exc}") from exc
    omega = np.zeros((n, n))
    for e in edges:
        if len(e) != 3:
            raise ValidationError(f"edge entry must be [i, j, w], got {e!r}")
        i, j, w = int(e[0]), int(e[1]), float(e[2])
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"edge ({i},{j}) out of range for n={n}")
        omega[i, j] += w
    has_lam = "lambda" in obj
    has_latent = "latent" in obj
    if has_lam == has_latent:
        raise ValidationError("graph file must contain exactly one of 'lambda' or 'latent'")
    if has_lam:
        soft = SoftPriority(np.asarray(obj["lambda"], dtype=float))
    else:
        latent = obj["latent"]
        soft = SoftPriority.from_latent(np.asarray(latent["z"], dtype=float), float(latent["alpha"]))
    if soft.n != n:
        raise ValidationError(f"soft priority has length {soft.n}, expected n={n}")
    return OrderParams(PriorityGraph(omega, beta), soft)


def dump_params(params: OrderParams, path) -> None:
    """Write a parameter file in the expanded-lambda form."""
    n = params.n
    edges = [
        [i, j, params.graph.omega[i, j]]
        for i in range(n)
        for j in range(n)
        if params.graph.omega[i, j] != 0
    ]
    obj = {
        "n": n,
        "beta": params.graph.beta,
        "edges": edges,
        "lambda": params.soft.lam.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def subset_mask(players) -> int:
    """Convenience re-export: bitmask of an iterable of players."""
    return mask_of(players)
