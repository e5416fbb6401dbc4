"""Priority sweeping: estimates along one-dimensional temperature slices
with ESS-gated sample reuse.

A plan fixes a base graph and latent per-player scores ``z`` and walks an
ascending temperature list along one axis:

* ``alpha_only``: the soft side sweeps, ``lam = exp(-temp * z)``, while the
  graph keeps its own beta (set the graph's beta to 0 for a pure soft
  slice).  Note the direction: larger temperature *lowers* lam for players
  with z > 0, and because sampling fills positions backward, low-lam players
  land *earlier* in forward order.
* ``beta_only``: the graph temperature sweeps while lam is identically 1.
* ``joint``: both temperatures equal the sweep value.

The first setting always draws its full budget fresh.  At each transition
the previous pool is reweighted against the new target (weights w.r.t. the
pool's true generating parameters), its effective sample size is read off,
and ``N_new = min(N, max(refresh_floor, ceil(N - ESS)))`` fresh orderings
are drawn.  A partial refresh combines both parts in the ESS : N_new hybrid
and the fresh draws become the next pool; a full refresh (``N_new == N``)
discards the carry entirely so that, under shared seeds, forcing
``refresh_floor = N`` reproduces a no-reuse run bit for bit; ``N_new == 0``
keeps the old pool (and its generating parameters) for the next transition.

Per-setting sampling streams derive from (seed, setting index), so inserting
a temperature into a plan does not perturb the other settings' fresh draws.
Settings are processed sequentially by necessity (the reuse chain); an
oracle failure stops the walk and returns the partial report flagged
incomplete.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from ._util import TAG_SWEEP, mix_seed, players_of
from .errors import ValidationError
from .estimators import ValueEstimate, direct_mc, ess, hybrid_estimate, snis_estimate, snis_weights
from .games import CachedOracle, UtilityOracle
from .model import OrderParams, PriorityGraph, SoftPriority, fingerprint
from .sampler import ChainConfig, SampleBatch, run_ensemble

__all__ = ["SweepPlan", "SweepSetting", "SweepReport", "run_sweep", "group_summary"]

_AXES = ("alpha_only", "beta_only", "joint")


@dataclass(frozen=True)
class SweepPlan:
    axis: str
    temps: tuple[float, ...]
    graph: PriorityGraph
    z: np.ndarray
    budget: int
    reuse: bool = True
    refresh_floor: int = 500
    group: int | None = None
    seed: int = 0
    burn_in: int | None = None
    thinning: int = 1000
    lazy_prob: float = 0.5
    n_chains: int = 1

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValidationError(f"axis must be one of {_AXES}, got {self.axis!r}")
        temps = tuple(float(t) for t in self.temps)
        if not temps:
            raise ValidationError("temps must be nonempty")
        if temps[0] != 0:
            raise ValidationError("temps must start at 0")
        if any(b < a for a, b in zip(temps, temps[1:])):
            raise ValidationError("temps must be ascending")
        if any(t < 0 for t in temps):
            raise ValidationError("temps must be non-negative")
        object.__setattr__(self, "temps", temps)
        z = np.asarray(self.z, dtype=float)
        if z.shape != (self.graph.n,):
            raise ValidationError(f"z has shape {z.shape}, expected ({self.graph.n},)")
        if np.any(z < 0) or np.any(~np.isfinite(z)):
            raise ValidationError("latent scores z must be finite and non-negative")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.budget < 1:
            raise ValidationError("budget must be positive")
        if self.refresh_floor < 0:
            raise ValidationError("refresh_floor must be non-negative")
        if self.group is not None and (self.group <= 0 or self.group >> self.graph.n):
            raise ValidationError("group must be a nonempty player mask within range")

    @property
    def n(self) -> int:
        return self.graph.n

    def params_at(self, temp: float) -> OrderParams:
        n = self.n
        if self.axis == "alpha_only":
            soft = SoftPriority.from_latent(self.z, temp)
            graph = self.graph
        elif self.axis == "beta_only":
            soft = SoftPriority.uniform(n)
            graph = PriorityGraph(self.graph.omega, beta=temp)
        else:
            soft = SoftPriority.from_latent(self.z, temp)
            graph = PriorityGraph(self.graph.omega, beta=temp)
        return OrderParams(graph, soft)


@dataclass
class SweepSetting:
    index: int
    temp: float
    params_fingerprint: str
    estimate: ValueEstimate
    ess_in: float
    n_new: int
    n_reused: int
    mean_position: np.ndarray  # per-player 1-indexed mean forward position
    distinct_evals: int | None
    total_calls: int | None
    group_sum: float | None = None
    group_mean_position: float | None = None


@dataclass
class SweepReport:
    settings: list[SweepSetting] = field(default_factory=list)
    complete: bool = True
    error: str | None = None
    plan_meta: dict = field(default_factory=dict)

    @property
    def fresh_total(self) -> int:
        return sum(s.n_new for s in self.settings)

    def to_json(self) -> str:
        obj = {
            "complete": self.complete,
            "error": self.error,
            "plan": self.plan_meta,
            "fresh_total": self.fresh_total,
            "settings": [
                {
                    "index": s.index,
                    "temp": s.temp,
                    "params_fingerprint": s.params_fingerprint,
                    "values": s.estimate.values.tolist(),
                    "ess_in": s.ess_in,
                    "n_new": s.n_new,
                    "n_reused": s.n_reused,
                    "mean_position": s.mean_position.tolist(),
                    "distinct_evals": s.distinct_evals,
                    "total_calls": s.total_calls,
                    "group_sum": s.group_sum,
                    "group_mean_position": s.group_mean_position,
                }
                for s in self.settings
            ],
        }
        return json.dumps(obj, indent=2)


def _mean_positions(batch: SampleBatch, weights: np.ndarray | None = None) -> np.ndarray:
    samples = batch.samples
    N, n = samples.shape
    pos = np.empty_like(samples, dtype=float)
    rows = np.arange(N)[:, None]
    pos[rows, samples] = np.arange(1, n + 1)[None, :]
    if weights is None:
        return pos.mean(axis=0)
    return (weights @ pos) / weights.sum()


def _draw_fresh(plan: SweepPlan, params: OrderParams, count: int, setting_index: int) -> SampleBatch:
    per_chain = int(ceil(count / plan.n_chains))
    config = ChainConfig(
        n_samples=per_chain,
        burn_in=plan.burn_in,
        thinning=plan.thinning,
        lazy_prob=plan.lazy_prob,
        seed=mix_seed(plan.seed, TAG_SWEEP, setting_index),
    )
    batch = run_ensemble(params, config, plan.n_chains)
    if len(batch) > count:
        batch = SampleBatch(batch.samples[:count], batch.provenance[:count], batch.params_fingerprint)
    return batch


def _counters(oracle) -> tuple[int | None, int | None]:
    if isinstance(oracle, CachedOracle):
        return oracle.distinct_evals, oracle.total_calls
    return None, None


def run_sweep(plan: SweepPlan, oracle: UtilityOracle) -> SweepReport:
    """Walk the plan's settings in ascending temperature, reusing samples."""
    if oracle.n != plan.n:
        raise ValidationError(f"oracle has n={oracle.n}, plan has n={plan.n}")
    report = SweepReport(
        plan_meta={
            "axis": plan.axis,
            "temps": list(plan.temps),
            "budget": plan.budget,
            "reuse": plan.reuse,
            "refresh_floor": plan.refresh_floor,
            "seed": plan.seed,
            "n_chains": plan.n_chains,
            "group": plan.group,
        }
    )
    N = plan.budget
    pool: SampleBatch | None = None
    pool_params: OrderParams | None = None
    for s, temp in enumerate(plan.temps):
        params = plan.params_at(temp)
        try:
            if s == 0 or not plan.reuse:
                fresh = _draw_fresh(plan, params, N, s)
                est = direct_mc(fresh, oracle)
                mean_pos = _mean_positions(fresh)
                ess_in, n_new, n_reused = 0.0, N, 0
                pool, pool_params = fresh, params
            else:
                w = snis_weights(pool_params, params, pool)
                e = ess(w)
                n_new = min(N, max(plan.refresh_floor, int(ceil(N - e))))
                if n_new >= N:
                    fresh = _draw_fresh(plan, params, N, s)
                    est = direct_mc(fresh, oracle)
                    mean_pos = _mean_positions(fresh)
                    ess_in, n_new, n_reused = e, N, 0
                    pool, pool_params = fresh, params
                elif n_new == 0:
                    est = snis_estimate(w, pool, oracle)
                    mean_pos = _mean_positions(pool, w)
                    ess_in, n_reused = e, len(pool)
                    # pool and its generating params carry forward unchanged
                    pool = SampleBatch(
                        pool.samples, np.full(len(pool), "reused"), pool.params_fingerprint
                    )
                else:
                    fresh = _draw_fresh(plan, params, n_new, s)
                    est = hybrid_estimate((w, pool), fresh, oracle)
                    lam = e / (e + len(fresh))
                    mean_pos = lam * _mean_positions(pool, w) + (1 - lam) * _mean_positions(fresh)
                    ess_in, n_reused = e, len(pool)
                    pool, pool_params = fresh, params
        except Exception as exc:  # oracle failure: flag and stop
            report.complete = False
            report.error = f"setting {s} (temp {temp}): {exc}"
            break
        distinct, calls = _counters(oracle)
        setting = SweepSetting(
            index=s,
            temp=temp,
            params_fingerprint=fingerprint(params),
            estimate=est,
            ess_in=ess_in,
            n_new=n_new,
            n_reused=n_reused,
            mean_position=mean_pos,
            distinct_evals=distinct,
            total_calls=calls,
        )
        if plan.group is not None:
            members = players_of(plan.group, plan.n)
            setting.group_sum = float(est.values[members].sum())
            setting.group_mean_position = float(mean_pos[members].mean())
        report.settings.append(setting)
    return report


def group_summary(report: SweepReport, group: int) -> list[tuple[float, float]]:
    """Per-setting (group value sum, group mean forward position) for a mask."""
    if group <= 0:
        raise ValidationError("group must be a nonempty player mask")
    out = []
    for s in report.settings:
        members = players_of(group, s.estimate.n)
        if not members:
            raise ValidationError("group mask selects no players")
        out.append(
            (float(s.estimate.values[members].sum()), float(s.mean_position[members].mean()))
        )
    return out
