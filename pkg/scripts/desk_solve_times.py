#!/usr/bin/env python3
"""Time branch-and-cut on desk-scale TS and MS models against the DP oracle."""
import argparse
import time
from dataclasses import replace

from evloc import experiments as ex
from evloc.oracle import dp_multistage


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--max-seconds", type=float, default=600.0)
    p.add_argument("--cuts", choices=("integral", "root", "all"), default="root")
    p.add_argument("--sites", type=int, default=ex.DESK_GENERATOR.n_sites, help="candidate sites (2 types each)")
    a = p.parse_args()
    cfg = ex.ExperimentConfig(max_seconds=a.max_seconds, cuts=a.cuts,
                              generator=replace(ex.DESK_GENERATOR, n_sites=a.sites))
    print("seed model status objective bound oracle nodes cuts seconds", flush=True)
    for seed in a.seeds:
        inst = ex.make_instance(cfg, seed)
        tree = ex.make_tree(cfg, inst, seed)
        ref = dp_multistage(inst, tree)[1]
        for model in ("ts", "ms"):
            t = time.perf_counter()
            _, r = ex.solve_model(cfg, inst, tree, model)
            oracle = ref if model == "ms" else float("nan")
            print(f"{seed} {model} {r.status} {r.objective:.6f} {r.best_bound:.6f} {oracle:.6f} "
                  f"{r.nodes_explored} {r.cuts_added} {time.perf_counter() - t:.1f}", flush=True)


if __name__ == "__main__":
    main()
