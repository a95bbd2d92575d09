#!/usr/bin/env python3
"""Certify recorded information flow as B-connected for a forced-broadcast suite.

Runs the certification template (or a custom config with the broadcast
deadline enabled), then checks every run's information-flow log at the window
implied by its topology period and deadline.  The smallest window that still
certifies is also reported, which shows how much slack the implied bound
leaves on the actual run.

Example:
    python3 scripts/run_certification.py --outdir results/certification
"""

import argparse
from dataclasses import replace
from pathlib import Path

from efhc.cli import TEMPLATES, discover_runs, run_suite
from efhc.config import load_config
from efhc.topology import certify_B_connectivity, compute_window_B, read_info_flow


def build_config(args):
    cfg = load_config(args.config) if args.config else TEMPLATES["b2-certification"][1]
    if args.K:
        cfg = replace(cfg, K=args.K)
    if args.seeds:
        cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",")])
    if not cfg.enforce_B2:
        raise SystemExit("the config must enable the broadcast deadline (enforce_B2)")
    return cfg


def minimal_window(log, upper):
    """Smallest B <= upper with no violations, assuming upper certifies."""
    best = upper
    for B in range(upper - 1, 0, -1):
        if len(log) < B or certify_B_connectivity(log, B):
            break
        best = B
    return best


def summarize(outdir):
    records = discover_runs(outdir)
    failures = 0
    for rec in records:
        cfg = rec.cfg
        b1 = 1 if cfg.topology == "static" else cfg.b1
        B = compute_window_B(b1, cfg.B2)
        log = read_info_flow(rec.path / "infoflow.txt")
        violations = certify_B_connectivity(log, B)
        if violations:
            failures += 1
            print(
                f"  {rec.path.name}: NOT certified at B={B}, "
                f"first violating window starts at k={violations[0]}"
            )
        else:
            print(
                f"  {rec.path.name}: certified at B={B} "
                f"(minimal certifying window {minimal_window(log, B)})"
            )
    return failures


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="config file overriding the template")
    parser.add_argument("--outdir", default="results/certification")
    parser.add_argument("--K", type=int, help="override the iteration count")
    parser.add_argument("--seeds", help="comma-separated seed override")
    args = parser.parse_args(argv)

    cfg = build_config(args)
    outdir = Path(args.outdir)
    run_suite(cfg, outdir)
    failures = summarize(outdir)
    if failures:
        print(f"{failures} runs failed certification")
        return 1
    print("all runs certified")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
