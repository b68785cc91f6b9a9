"""Command-line entry point: ``python -m evloc <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import experiments as ex


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evloc", description="Multi-year EV charging-station location experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--instance", help="instance JSON (default: generate from --seed)")
        sp.add_argument("--tree", help="scenario tree JSON (default: generate from --seed)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--scale", choices=("desk", "full"), default="desk",
                        help="generator dimensions when no instance file is given")
        sp.add_argument("--branching", type=int, default=3)
        sp.add_argument("--sd", type=float, default=0.096, help="growth-rate standard deviation")
        sp.add_argument("--mean", type=float, default=0.435, help="mean annual growth rate")
        sp.add_argument("--beta", type=float, default=None, help="override the distance coefficient")
        sp.add_argument("--suburb-offset", type=float, default=0.0)
        sp.add_argument("--absolute-sd", action="store_true",
                        help="keep the suburb growth sd fixed when its mean is offset")
        sp.add_argument("--independent-draws", action="store_true",
                        help="draw growth per demand node instead of per zone")
        return sp

    def solving(sp):
        sp.add_argument("--model", choices=ex.MODELS, default="ms")
        sp.add_argument("--reform", choices=ex.REFORMS, default="sgi")
        sp.add_argument("--form", choices=("node", "scenario"), default="node")
        sp.add_argument("--backend", choices=("highs", "linprog", "dense"), default="highs")
        sp.add_argument("--cuts", choices=("integral", "root", "all"), default="root")
        sp.add_argument("--precision", type=int, default=1000, help="weight scaling for r4")
        sp.add_argument("--max-seconds", type=float, default=3600.0)
        sp.add_argument("--max-nodes", type=int, default=200_000)
        return sp

    def gapping(sp):
        sp.add_argument("--reps", type=int, default=ex.DESK_REPLICATIONS, help="replications (seeds seed..seed+reps-1)")
        sp.add_argument("--engine", choices=("auto", "dp", "bnc"), default="auto")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out-of-sample", action="store_true",
                        help="score fitted plans on a fresh tree (extension)")
        return sp

    common(sub.add_parser("generate", help="write instance and tree JSON"))
    solving(common(sub.add_parser("solve", help="solve one model")))
    gapping(solving(common(sub.add_parser("gap", help="TS vs MS gap over seeds"))))
    sw = gapping(solving(common(sub.add_parser("sweep", help="sensitivity sweep to CSV"))))
    sw.add_argument("parameter", choices=ex.SWEEP_PARAMETERS)
    sw.add_argument("--values", type=float, nargs="+", help="sweep values (defaults per parameter)")
    sz = sub.add_parser("sizes", help="variable/constraint counts at 58 nodes, 20 options, 4 years, 81 scenarios")
    sz.add_argument("--out", default="out")
    sz.add_argument("--seed", type=int, default=0)
    sz.add_argument("--reform", choices=ex.REFORMS, action="append",
                    help="restrict to these reformulations (repeatable)")
    return p


def config_from_args(a) -> ex.ExperimentConfig:
    gen = ex.FULL_GENERATOR if getattr(a, "scale", "desk") == "full" else ex.DESK_GENERATOR
    cfg = ex.ExperimentConfig(
        instance_path=getattr(a, "instance", None), tree_path=getattr(a, "tree", None),
        seed=a.seed, out=a.out, generator=gen,
    )
    if a.command == "sizes":
        return cfg
    cfg = replace(cfg, branching=a.branching, growth_sd=a.sd, growth_mean=a.mean, beta=a.beta,
                  suburb_offset=a.suburb_offset,
                  heterogeneity_scale_sd=not a.absolute_sd, shared_by_zone=not a.independent_draws)
    if a.command == "generate":
        return cfg
    cfg = replace(cfg, model=a.model, reform=a.reform, form=a.form, backend=a.backend, cuts=a.cuts,
                  precision=a.precision, max_seconds=a.max_seconds, max_nodes=a.max_nodes)
    if a.command == "solve":
        return cfg
    cfg = replace(cfg, replications=a.reps, engine=a.engine, workers=a.workers, out_of_sample=a.out_of_sample)
    if a.command == "sweep":
        values = tuple(a.values) if a.values else ex.DEFAULT_SWEEP_VALUES[a.parameter]
        cfg = replace(cfg, sweep=ex.SweepSpec(a.parameter, values, a.reps, cfg.seeds))
    return cfg


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    cfg = config_from_args(a)
    if a.command == "generate":
        ip, tp = ex.cmd_generate(cfg)
        print(ip)
        print(tp)
    elif a.command == "solve":
        doc = ex.cmd_solve(cfg)
        r = doc["result"]
        print(f"{r['status']} objective={r['objective']:.10g} bound={r['best_bound']:.10g} "
              f"nodes={r['nodes_explored']} cuts={r['cuts_added']} time={r['wall_time']:.2f}s")
        if doc["partial"]:
            print("warning: solver limit reached; result is partial", file=sys.stderr)
    elif a.command == "gap":
        recs = ex.cmd_gap(cfg)
        for r in recs:
            print(f"seed={r.seed} ts={r.ts_value:.10g} ms={r.ms_value:.10g} gap={r.gap_pct:.4f}% {r.status}")
        s = ex.summarize(recs)
        print(f"mean gap {s['mean_gap_pct']:.4f}% (sd {s['sd_gap_pct']:.4f}, n={s['n']})")
    elif a.command == "sweep":
        recs = ex.cmd_sweep(cfg)
        for v, g in ex.mean_by_value(recs).items():
            print(f"{a.parameter}={v:g} mean gap {g:.4f}%")
    elif a.command == "sizes":
        reps = ex.cmd_sizes(cfg, tuple(a.reform) if a.reform else ex.REFORMS)
        print(json.dumps(reps, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
