#!/usr/bin/env python3
"""Compare trigger policies at matched cumulative transmission time.

Runs the tradeoff template (or a custom config) across its policies and
seeds, then interpolates each policy's best metric onto a shared grid of
cumulative transmission time per seed.  One CSV per seed lands in the suite
directory, and the final matched-time values are printed per seed along with
their mean.  With --plot the seed-1 curves are drawn.

Example:
    python3 scripts/run_tradeoff.py --outdir results/tradeoff --plot
"""

import argparse
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from efhc.analysis import tradeoff_table, tradeoff_to_csv
from efhc.cli import TEMPLATES, discover_runs, run_suite
from efhc.config import load_config


def build_config(args):
    cfg = load_config(args.config) if args.config else TEMPLATES["tradeoff"][1]
    if args.K:
        cfg = replace(cfg, K=args.K)
    if args.seeds:
        cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",")])
    if args.r:
        cfg = replace(cfg, r=args.r)
    return cfg


def summarize(outdir, plot):
    records = discover_runs(outdir)
    by_seed = defaultdict(dict)
    for rec in records:
        by_seed[rec.seed][rec.policy] = rec.trace
    use_acc = records[0].cfg.task == "fmnist"
    metric = "mean_accuracy" if use_acc else "optimality_gap"
    finals = defaultdict(list)
    first_plot = None
    for seed in sorted(by_seed):
        traces = by_seed[seed]
        grid, table = tradeoff_table(traces, metric=metric, maximize=use_acc)
        out = outdir / f"tradeoff-seed{seed}.csv"
        tradeoff_to_csv(grid, table, out)
        parts = []
        for policy in sorted(table):
            finals[policy].append(float(table[policy][-1]))
            parts.append(f"{policy}={table[policy][-1]:.3e}")
        print(f"seed {seed}: {metric} at shared time {grid[-1]:.3e}: " + ", ".join(parts))
        if first_plot is None:
            first_plot = (grid, table)
    print(
        "seed means: "
        + ", ".join(f"{p}={np.mean(v):.3e}" for p, v in sorted(finals.items()))
    )
    if plot and first_plot is not None:
        plot_tables(outdir, metric, *first_plot)


def plot_tables(outdir, metric, grid, table):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed, skipping the plot")
        return
    plt.figure(figsize=(7, 5))
    for policy in sorted(table):
        plt.plot(grid, table[policy], label=policy)
    plt.xlabel("cumulative transmission time")
    plt.ylabel(f"best {metric} so far")
    plt.yscale("log" if metric == "optimality_gap" else "linear")
    plt.legend()
    out = outdir / "tradeoff.png"
    plt.savefig(out, bbox_inches="tight", dpi=120)
    print(f"wrote {out}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="config file overriding the template")
    parser.add_argument("--outdir", default="results/tradeoff")
    parser.add_argument("--K", type=int, help="override the iteration count")
    parser.add_argument("--seeds", help="comma-separated seed override")
    parser.add_argument("--r", type=float, help="override the trigger scale")
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args(argv)

    cfg = build_config(args)
    outdir = Path(args.outdir)
    run_suite(cfg, outdir)
    summarize(outdir, args.plot)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
