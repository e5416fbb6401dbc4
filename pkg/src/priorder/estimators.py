"""Value estimators: direct Monte Carlo, SNIS reuse, and the two-stage
surrogate-adjusted path.

The direct estimator averages marginal-contribution vectors over sampled
orderings; its coordinates telescope, so every estimate here that is a
(weighted) convex combination of per-ordering contribution vectors sums to
``U(full) - U(empty)`` exactly.

Reuse across nearby targets: weights ``w = exp(log p'~ - log p~)`` turn a
batch drawn under one parameter set into a self-normalized estimate under
another; their effective sample size ``(sum w)^2 / sum w^2`` gates how many
fresh draws to add, and the hybrid estimate convex-combines the reused and
fresh parts with weights ESS : N_fresh.

The surrogate path spends utility calls differently: per-(player, subset)
signed coefficients are estimated from utility-free orderings, inducing a
subset proposal q (mass proportional to aggregate coefficient magnitude
across players) and WLS weights; a linear or sparse-quadratic surrogate fit
under those weights gives a closed-form value, and iid residual corrections
from q de-bias the plug-in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .games import UtilityOracle, CachedOracle
from .model import OrderParams, fingerprint, log_unnormalized_pmf_batch
from .sampler import SampleBatch

__all__ = [
    "ValueEstimate",
    "SurrogateModel",
    "CoefficientEstimates",
    "marginal_contributions",
    "direct_mc",
    "snis_weights",
    "ess",
    "snis_estimate",
    "hybrid_estimate",
    "estimate_coefficients",
    "fit_surrogate",
    "surrogate_value",
    "two_stage_estimate",
    "draw_proposal_subsets",
    "combine_replicates",
]


@dataclass
class ValueEstimate:
    """Per-player values with optional across-replicate dispersion.

    ``std`` is only ever populated from replicate spread
    (:func:`combine_replicates`), never from within-chain autocorrelation.
    """

    values: np.ndarray
    std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _oracle_counters(oracle) -> dict:
    if isinstance(oracle, CachedOracle):
        return {
            "distinct_evals": oracle.distinct_evals,
            "total_calls": oracle.total_calls,
        }
    return {}


def marginal_contributions(order, oracle: UtilityOracle) -> np.ndarray:
    """Marginal contribution of each player along one ordering.

    One prefix scan, n+1 oracle calls; the coordinates sum to
    ``U(full) - U(empty)`` by telescoping.
    """
    order = np.asarray(order, dtype=np.int64)
    return _delta_matrix(order[None, :], oracle)[0]


def _delta_matrix(samples: np.ndarray, oracle: UtilityOracle) -> np.ndarray:
    N, n = samples.shape
    if oracle.n != n:
        raise ValidationError(f"oracle has n={oracle.n}, samples have n={n}")
    out = np.empty((N, n))
    for r in range(N):
        mask = 0
        prev = oracle.evaluate(0)
        row = samples[r]
        for t in range(n):
            p = int(row[t])
            mask |= 1 << p
            cur = oracle.evaluate(mask)
            out[r, p] = cur - prev
            prev = cur
    return out


def direct_mc(batch: SampleBatch, oracle: UtilityOracle) -> ValueEstimate:
    """Plain Monte Carlo average of marginal contributions over a batch."""
    if len(batch) == 0:
        raise ValidationError("cannot estimate from an empty batch")
    deltas = _delta_matrix(batch.samples, oracle)
    meta = {
        "method": "direct_mc",
        "n_samples": len(batch),
        "params_fingerprint": batch.params_fingerprint,
    }
    meta.update(_oracle_counters(oracle))
    return ValueEstimate(deltas.mean(axis=0), None, meta)


def snis_weights(old_params: OrderParams, new_params: OrderParams, batch: SampleBatch) -> np.ndarray:
    """Importance weights of a batch drawn under ``old_params`` against
    ``new_params``.

    Computed in the log domain and rescaled by the max (ratios are all that
    matter to self-normalized reuse); identical parameter sets give all-ones.
    """
    if old_params.n != new_params.n:
        raise ValidationError(
            f"dimension mismatch between param sets: {old_params.n} vs {new_params.n}"
        )
    if batch.params_fingerprint and batch.params_fingerprint != fingerprint(old_params):
        raise ValidationError("batch was not drawn under old_params (fingerprint mismatch)")
    logw = log_unnormalized_pmf_batch(new_params, batch.samples) - log_unnormalized_pmf_batch(
        old_params, batch.samples
    )
    return np.exp(logw - logw.max())


def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` of non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValidationError("ess of an empty weight vector")
    if np.any(w < 0):
        raise ValidationError("weights must be non-negative")
    total = w.sum()
    if total == 0:
        raise ValidationError("all-zero weights")
    return float(total * total / np.square(w).sum())


def snis_estimate(weights, batch: SampleBatch, oracle: UtilityOracle) -> ValueEstimate:
    """Self-normalized weighted mean of marginal contributions."""
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != len(batch):
        raise ValidationError(f"{w.shape[0]} weights for {len(batch)} samples")
    deltas = _delta_matrix(batch.samples, oracle)
    values = (w @ deltas) / w.sum()
    meta = {"method": "snis", "n_samples": len(batch), "ess": ess(w)}
    meta.update(_oracle_counters(oracle))
    return ValueEstimate(values, None, meta)


def hybrid_estimate(
    reused: tuple[np.ndarray, SampleBatch] | None,
    fresh: SampleBatch | None,
    oracle: UtilityOracle,
) -> ValueEstimate:
    """Convex combination of a reused (reweighted) batch and fresh draws.

    Component weights are ESS : N_fresh.  Reduces to the pure SNIS estimate
    with no fresh draws and to direct Monte Carlo with nothing reused.
    """
    have_reused = reused is not None and len(reused[1]) > 0
    have_fresh = fresh is not None and len(fresh) > 0
    if not have_reused and not have_fresh:
        raise ValidationError("hybrid estimate needs at least one nonempty input")
    if not have_fresh:
        return snis_estimate(reused[0], reused[1], oracle)
    if not have_reused:
        est = direct_mc(fresh, oracle)
        est.meta["method"] = "hybrid"
        est.meta["ess"] = 0.0
        est.meta["n_fresh"] = len(fresh)
        return est
    w, old_batch = reused
    e = ess(w)
    part_old = snis_estimate(w, old_batch, oracle)
    part_new = direct_mc(fresh, oracle)
    lam = e / (e + len(fresh))
    values = lam * part_old.values + (1.0 - lam) * part_new.values
    meta = {
        "method": "hybrid",
        "ess": e,
        "n_reused": len(old_batch),
        "n_fresh": len(fresh),
        "params_fingerprint": fresh.params_fingerprint,
    }
    meta.update(_oracle_counters(oracle))
    return ValueEstimate(values, None, meta)


@dataclass
class CoefficientEstimates:
    """Signed subset coefficients, the induced proposal, and pairwise orders.

    ``rho_hat[(i, mask)]`` estimates the signed weight of U(mask) in player
    i's value; ``q_hat`` is the subset proposal proportional to aggregate
    |rho| across players; ``eta_hat[i, j]`` is the frequency that i precedes
    j among the source orderings.  ``M`` is how many orderings were used
    (0 means externally supplied / exact).
    """

    n: int
    rho_hat: dict[tuple[int, int], float]
    q_hat: dict[int, float]
    eta_hat: np.ndarray
    M: int

    def __post_init__(self):
        by_mask: dict[int, list[tuple[int, float]]] = {}
        for (i, mask), v in self.rho_hat.items():
            by_mask.setdefault(mask, []).append((i, v))
        self._by_mask = by_mask
        self.support = sorted(self.q_hat)

    def gamma_row(self, mask: int) -> np.ndarray:
        """rho_hat(., mask) / q_hat(mask) as a dense player vector."""
        q = self.q_hat.get(mask)
        if q is None or q <= 0:
            raise ValidationError(f"subset mask {mask} outside the proposal support")
        row = np.zeros(self.n)
        for i, v in self._by_mask.get(mask, ()):
            row[i] = v / q
        return row

    def wls_weight(self, mask: int) -> float:
        """sum_i rho_hat_i(mask)^2 / q_hat(mask)^2."""
        q = self.q_hat.get(mask)
        if q is None or q <= 0:
            raise ValidationError(f"subset mask {mask} outside the proposal support")
        return sum(v * v for _, v in self._by_mask.get(mask, ())) / (q * q)


def estimate_coefficients(batch_free) -> CoefficientEstimates:
    """Estimate subset coefficients from utility-free orderings.

    Each ordering contributes +1/M at (i, prefix-with-i) and -1/M at
    (i, prefix-before-i) for every player, so the support of the induced
    proposal is exactly the prefixes observed (with and without their
    closing element); entries lie in [-1, 1].
    """
    orders = batch_free.samples if isinstance(batch_free, SampleBatch) else np.asarray(batch_free, dtype=np.int64)
    if orders.ndim != 2 or orders.shape[0] == 0:
        raise ValidationError("need at least one ordering")
    M, n = orders.shape
    counts: dict[tuple[int, int], int] = {}
    for r in range(M):
        mask = 0
        row = orders[r]
        for t in range(n):
            i = int(row[t])
            grown = mask | (1 << i)
            counts[(i, grown)] = counts.get((i, grown), 0) + 1
            counts[(i, mask)] = counts.get((i, mask), 0) - 1
            mask = grown
    rho = {key: c / M for key, c in counts.items() if c != 0}
    agg: dict[int, float] = {}
    for (i, mask), v in rho.items():
        agg[mask] = agg.get(mask, 0.0) + abs(v)
    total = sum(agg.values())
    q = {mask: a / total for mask, a in agg.items() if a > 0}
    pos = np.empty_like(orders)
    rows = np.arange(M)[:, None]
    pos[rows, orders] = np.arange(n)[None, :]
    eta = (pos[:, :, None] < pos[:, None, :]).mean(axis=0)
    np.fill_diagonal(eta, 0.0)
    return CoefficientEstimates(n, rho, q, eta, M)


@dataclass
class SurrogateModel:
    """Linear or sparse-quadratic stand-in for the utility.

    ``b`` holds symmetric pairwise terms keyed by (i, j) with i < j; pairs
    outside the selected interaction set are implicitly zero.  The intercept
    is pinned to U(empty) = 0.
    """

    kind: str
    a: np.ndarray
    b: dict[tuple[int, int], float]
    intercept: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def predict(self, mask: int) -> float:
        mask = int(mask)
        val = self.intercept
        for i in range(self.n):
            if (mask >> i) & 1:
                val += self.a[i]
        for (i, j), bij in self.b.items():
            if (mask >> i) & 1 and (mask >> j) & 1:
                val += bij
        return float(val)

    def predict_batch(self, masks: Sequence[int]) -> np.ndarray:
        arr = np.array([int(m) for m in masks], dtype=np.uint64)
        bits = ((arr[:, None] >> np.arange(self.n, dtype=np.uint64)) & np.uint64(1)).astype(float)
        out = self.intercept + bits @ self.a
        for (i, j), bij in self.b.items():
            out += bij * bits[:, i] * bits[:, j]
        return out


def _pair_universe(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def fit_surrogate(
    train: Iterable[tuple[int, float]],
    coeffs: CoefficientEstimates,
    kind: str = "linear",
    interaction_fraction: float = 0.1,
    interactions: Sequence[tuple[int, int]] | None = None,
    rng: np.random.Generator | None = None,
    ridge: float = 1e-10,
) -> SurrogateModel:
    """Weighted least squares fit of a surrogate on evaluated subsets.

    Row weights come from the coefficient estimates (so subsets that matter
    more to the value vector count more); a tiny ridge absorbs rank
    deficiency from repeated subsets, and a degenerate design is reported in
    ``meta['rank_deficient']`` rather than silently inverted.  For the
    quadratic kind the interaction set is either supplied or sampled
    uniformly without replacement (seeded; default stream 0).
    """
    if kind not in ("linear", "quadratic"):
        raise ValidationError(f"surrogate kind must be linear or quadratic, got {kind!r}")
    pairs: list[tuple[int, int]] = []
    n = coeffs.n
    if kind == "quadratic":
        if interactions is not None:
            pairs = [(min(i, j), max(i, j)) for i, j in interactions]
        else:
            universe = _pair_universe(n)
            count = int(round(interaction_fraction * len(universe)))
            if count > 0:
                rng = rng if rng is not None else np.random.default_rng(0)
                idx = rng.choice(len(universe), size=count, replace=False)
                pairs = [universe[k] for k in sorted(idx)]
    data = list(train)
    if not data:
        raise ValidationError("empty training set")
    masks = np.array([int(m) for m, _ in data], dtype=np.uint64)
    y = np.array([float(v) for _, v in data])
    w = np.array([coeffs.wls_weight(int(m)) for m, _ in data])
    bits = ((masks[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)).astype(float)
    cols = [bits]
    for i, j in pairs:
        cols.append((bits[:, i] * bits[:, j])[:, None])
    X = np.concatenate(cols, axis=1)
    p = X.shape[1]
    Xw = X * w[:, None]
    gram = X.T @ Xw
    rhs = Xw.T @ y
    theta = np.linalg.solve(gram + ridge * np.eye(p), rhs)
    eig = np.linalg.eigvalsh(gram)
    rank = int(np.sum(eig > max(eig.max(), 0.0) * 1e-12)) if eig.size else 0
    model = SurrogateModel(
        kind=kind,
        a=theta[:n],
        b={pair: float(theta[n + k]) for k, pair in enumerate(pairs)},
        intercept=0.0,
        meta={
            "ridge": ridge,
            "rank_deficient": rank < p,
            "n_train": len(data),
            "interactions": pairs,
        },
    )
    return model


def surrogate_value(model: SurrogateModel, eta: np.ndarray | None = None) -> np.ndarray:
    """Closed-form value of a surrogate: ``a_i`` plus, for quadratic models,
    ``sum_j eta[j, i] * b_ij`` where eta[j, i] is P(j precedes i)."""
    psi = model.a.astype(float).copy()
    if model.kind == "quadratic" and model.b:
        if eta is None:
            raise ValidationError("quadratic surrogate value needs a pairwise-order matrix")
        for (i, j), bij in model.b.items():
            psi[i] += eta[j, i] * bij
            psi[j] += eta[i, j] * bij
    return psi


def two_stage_estimate(
    model: SurrogateModel,
    coeffs: CoefficientEstimates,
    residual_subsets: Sequence[int],
    oracle: UtilityOracle,
) -> ValueEstimate:
    """Surrogate value plus proposal-weighted residual correction.

    ``residual_subsets`` are iid draws from the coefficient proposal (repeat
    draws are fine; with a cached oracle they cost nothing extra).  With a
    surrogate that matches the utility on the support, the correction is
    exactly zero.
    """
    eta = coeffs.eta_hat if model.kind == "quadratic" else None
    psi = surrogate_value(model, eta)
    K = len(residual_subsets)
    if K:
        gammas = np.stack([coeffs.gamma_row(int(m)) for m in residual_subsets])
        resid = np.array(
            [oracle.evaluate(int(m)) for m in residual_subsets]
        ) - model.predict_batch(residual_subsets)
        psi = psi + (gammas * resid[:, None]).mean(axis=0)
    meta = {"method": "two_stage", "kind": model.kind, "residual_draws": K}
    meta.update(_oracle_counters(oracle))
    return ValueEstimate(psi, None, meta)


def draw_proposal_subsets(coeffs: CoefficientEstimates, k: int, rng: np.random.Generator) -> list[int]:
    """Draw k masks iid from the coefficient proposal."""
    support = coeffs.support
    probs = np.array([coeffs.q_hat[m] for m in support])
    idx = rng.choice(len(support), size=k, p=probs / probs.sum())
    return [support[i] for i in idx]


def combine_replicates(estimates: Sequence[ValueEstimate]) -> ValueEstimate:
    """Mean and across-replicate standard deviation of repeated estimates."""
    if not estimates:
        raise ValidationError("no replicates to combine")
    vals = np.stack([e.values for e in estimates])
    std = vals.std(axis=0, ddof=1) if len(estimates) > 1 else np.zeros(vals.shape[1])
    return ValueEstimate(vals.mean(axis=0), std, {"replicates": len(estimates)})
