#!/usr/bin/env python3
"""Run the three gap sweeps at desk scale and print the mean gap per value.

Writes sweep-sd.csv, sweep-beta.csv and sweep-heterogeneity.csv under --out.
"""
import argparse
from dataclasses import replace

from evloc import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--reps", type=int, default=ex.DESK_REPLICATIONS)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out/sweeps")
    a = p.parse_args()
    seeds = tuple(range(a.first_seed, a.first_seed + a.reps))
    base = ex.ExperimentConfig(out=a.out, workers=a.workers)
    for param in ex.SWEEP_PARAMETERS:
        spec = ex.SweepSpec(param, ex.DEFAULT_SWEEP_VALUES[param], a.reps, seeds)
        recs = ex.cmd_sweep(replace(base, sweep=spec))
        shares = {}
        for r in recs:
            shares.setdefault(r.value, []).append(r.central_share)
        print(f"[{param}]")
        for v, g in ex.mean_by_value(recs).items():
            s = sum(shares[v]) / len(shares[v])
            print(f"  {v:>7g}  mean gap {g:.4f}%  central share {s:.2f}%")


if __name__ == "__main__":
    main()
