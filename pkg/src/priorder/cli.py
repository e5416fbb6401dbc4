"""Command-line front end: value estimation, exact oracles, sweeps, mixing.

Subcommands
-----------
value    direct Monte Carlo values of a game under a graph file
exact    exact values (n <= 10) or the DP pairwise matrix (n <= 24)
sweep    temperature sweep along one axis with ESS-gated sample reuse
mixing   practical mixing time of the adjacent-swap chain vs the DP target

All randomness flows from ``--seed``; sub-streams are derived as
``default_rng([seed, tag, index])`` (see _util.substream), so components can
be re-run in isolation.  Primary CSV outputs are byte-stable across reruns
with identical flags; a timestamp appears only in the metadata JSON.  Floats
print with 17 significant digits, '.' decimal, no locale.

Exit codes: 0 success, 1 parse error (unreadable/undecodable input files),
2 contract violation (invalid matrix entries, size guards, missing utility
masks, ...), with messages on standard error.

Sweep direction note: along the soft axis, a larger temperature *lowers*
the weight of players with positive latent score, and because sampling
fills positions backward, those players move *earlier* in forward order.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone

import numpy as np

from ._util import mask_of
from .errors import MissingUtilityError, SizeLimitError, ValidationError
from .estimators import direct_mc
from .exact import dp_pairwise_probs, exact_value
from .games import CachedOracle, load_game
from .model import fingerprint, load_params
from .sampler import ChainConfig, SampleBatch, run_ensemble
from .diagnostics import practical_mixing_time
from .sweep import SweepPlan, run_sweep

__all__ = ["main"]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_values_csv(path, values, std=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("player,value,std\n" if std is not None else "player,value\n")
        for i, v in enumerate(values):
            if std is not None:
                fh.write(f"{i},{_fmt(v)},{_fmt(std[i])}\n")
            else:
                fh.write(f"{i},{_fmt(v)}\n")


def _write_meta(path, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _cmd_value(args) -> int:
    params = load_params(args.graph)
    game = load_game(args.game, params.n)
    if game.n != params.n:
        raise ValidationError(f"game has n={game.n}, graph has n={params.n}")
    oracle = CachedOracle(game, path=args.cache_file)
    per_chain = -(-args.samples // args.chains)
    config = ChainConfig(
        n_samples=per_chain,
        burn_in=args.burnin,
        thinning=args.thin,
        lazy_prob=args.lazy,
        seed=args.seed,
    )
    batch = run_ensemble(params, config, args.chains, threads=args.threads)
    if len(batch) > args.samples:
        batch = SampleBatch(
            batch.samples[: args.samples],
            batch.provenance[: args.samples],
            batch.params_fingerprint,
        )
    est = direct_mc(batch, oracle)
    oracle.close()
    _write_values_csv(args.out, est.values)
    meta = {
        "command": "value",
        "graph": str(args.graph),
        "game": str(args.game),
        "samples": int(args.samples),
        "chains": int(args.chains),
        "burnin": config.resolved_burn_in(params.n),
        "thin": int(args.thin),
        "lazy": float(args.lazy),
        "seed": int(args.seed),
        "params_fingerprint": fingerprint(params),
        "distinct_evals": oracle.distinct_evals,
        "total_calls": oracle.total_calls,
        "new_distinct_evals": oracle.misses,
        "timestamp": _now(),
    }
    _write_meta(args.out + ".meta.json", meta)
    return 0


def _cmd_exact(args) -> int:
    params = load_params(args.graph)
    if args.mode == "pairwise":
        P = dp_pairwise_probs(params)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("i,j,p_precedes\n")
            for i in range(params.n):
                for j in range(params.n):
                    if i != j:
                        fh.write(f"{i},{j},{_fmt(P[i, j])}\n")
        return 0
    if args.game is None:
        raise ValidationError("mode 'values' requires --game")
    game = load_game(args.game, params.n)
    values = exact_value(params, game)
    _write_values_csv(args.out, values)
    return 0


def _cmd_sweep(args) -> int:
    import os

    params = load_params(args.graph)
    with open(args.graph, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if "latent" in raw:
        z = np.asarray(raw["latent"]["z"], dtype=float)
    elif args.axis == "beta_only":
        z = np.zeros(params.n)
    else:
        raise ValidationError(
            "sweeping the soft axis needs the graph file's latent form (z scores)"
        )
    game = load_game(args.game, params.n)
    oracle = CachedOracle(game, path=args.cache_file)
    temps = tuple(float(t) for t in args.temps.split(","))
    group = mask_of(int(p) for p in args.group.split(",")) if args.group else None
    plan = SweepPlan(
        axis=args.axis,
        temps=temps,
        graph=params.graph,
        z=z,
        budget=args.budget,
        reuse=args.reuse,
        refresh_floor=args.refresh_floor,
        group=group,
        seed=args.seed,
        burn_in=args.burnin,
        thinning=args.thin,
        lazy_prob=args.lazy,
        n_chains=args.chains,
    )
    report = run_sweep(plan, oracle)
    oracle.close()
    os.makedirs(args.out_dir, exist_ok=True)
    for s in report.settings:
        _write_values_csv(os.path.join(args.out_dir, f"setting_{s.index:02d}.csv"), s.estimate.values)
    with open(os.path.join(args.out_dir, "settings.csv"), "w", encoding="utf-8") as fh:
        cols = "index,temp,ess_in,n_new,n_reused,distinct_evals,total_calls"
        if group is not None:
            cols += ",group_sum,group_mean_position"
        fh.write(cols + "\n")
        for s in report.settings:
            row = (
                f"{s.index},{_fmt(s.temp)},{_fmt(s.ess_in)},{s.n_new},{s.n_reused},"
                f"{s.distinct_evals},{s.total_calls}"
            )
            if group is not None:
                row += f",{_fmt(s.group_sum)},{_fmt(s.group_mean_position)}"
            fh.write(row + "\n")
    with open(os.path.join(args.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        obj = json.loads(report.to_json())
        obj["timestamp"] = _now()
        json.dump(obj, fh, indent=2)
    if not report.complete:
        print(f"sweep incomplete: {report.error}", file=sys.stderr)
        return 2
    return 0


def _cmd_mixing(args) -> int:
    params = load_params(args.graph)
    if params.n > 24:
        raise SizeLimitError(f"mixing diagnostic limited to n <= 24, got n={params.n}")
    inits = ["greedy", "random"] if args.init == "both" else [args.init]
    reference = dp_pairwise_probs(params)
    results = {}
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("init,t,deviation\n")
        for init in inits:
            res = practical_mixing_time(
                params,
                n_chains=args.chains,
                init=init,
                seed=args.seed,
                reference=reference,
            )
            results[init] = res
            for t, d in res.curve:
                fh.write(f"{init},{t},{_fmt(d)}\n")
    meta = {"command": "mixing", "seed": args.seed, "chains": args.chains, "timestamp": _now()}
    for init, res in results.items():
        meta[f"crossing_{init}"] = res.crossing if res.mixed else "NotMixed"
        print(f"{init}: {'crossing at step ' + str(res.crossing) if res.mixed else 'NotMixed'} "
              f"(horizon {res.horizon})")
    _write_meta(args.out + ".meta.json", meta)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorder",
        description="Priority-aware random-order values: estimate, solve exactly, sweep, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("value", help="direct Monte Carlo value estimation")
    p.add_argument("graph", help="graph parameter file (JSON)")
    p.add_argument("game", help="game spec (JSON) or utility table (CSV)")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--burnin", type=int, default=None, help="default ceil(n^2.5)")
    p.add_argument("--thin", type=int, default=1000)
    p.add_argument("--lazy", type=float, default=0.5)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cache-file", default=None, help="persistent utility cache (CSV)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_value)

    p = sub.add_parser("exact", help="exact values / pairwise matrix")
    p.add_argument("graph")
    p.add_argument("--game", default=None)
    p.add_argument("--mode", choices=["values", "pairwise"], default="values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser(
        "sweep",
        help="temperature sweep with sample reuse",
        epilog=(
            "Soft-axis direction: larger temperature lowers the weight of players "
            "with positive latent score, pushing them earlier in forward order."
        ),
    )
    p.add_argument("graph")
    p.add_argument("game")
    p.add_argument("--axis", choices=["alpha_only", "beta_only", "joint"], required=True)
    p.add_argument("--temps", required=True, help="comma-separated ascending, starting at 0")
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--reuse", dest="reuse", action="store_true", default=True)
    p.add_argument("--no-reuse", dest="reuse", action="store_false")
    p.add_argument("--refresh-floor", type=int, default=500)
    p.add_argument("--group", default=None, help="comma-separated player indices")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burnin", type=int, default=None)
    p.add_argument("--thin", type=int, default=1000)
    p.add_argument("--lazy", type=float, default=0.5)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--cache-file", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("mixing", help="practical mixing time vs the DP target")
    p.add_argument("graph")
    p.add_argument("--chains", type=int, default=1000)
    p.add_argument("--init", choices=["greedy", "random", "both"], default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mixing)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, SizeLimitError, MissingUtilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
