"""Command line entry points.

Verbs:

* ``run <config>``: execute every (policy, seed) pair into an output tree;
* ``verify <dir>``: re-check a finished suite against the shipped criteria;
* ``gen-config --template <name>``: write a starter configuration;
* ``certify <infoflow> --B <n>``: certify a recorded information-flow log.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime
failure, 3 a verification criterion failed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
import traceback
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis, datasets, engine, learning, topology
from .config import DATASET_ENV, ConfigError, ExperimentConfig, config_text, load_config

# sub-seed tags for the per-run environment draws
_SEED_TASKS = 11
_SEED_GRAPH = 12
_SEED_BANDWIDTH = 13

SUMMARY_HEADER = "policy,seed,consensus_error,optimality_gap,total_broadcasts,total_time,mean_accuracy"
PARTIAL_MARKER = "PARTIAL_RESULTS"


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class RunEnv:
    """Per-seed experiment environment shared by every policy."""

    tasks: list
    schedule: topology.TopologySchedule
    bandwidths: datasets.BandwidthProfile
    w_star: np.ndarray | None
    eval_fn: object


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    raw = cfg.dataset_dir or os.environ.get(DATASET_ENV, "")
    if not raw:
        raise ConfigError(
            f"fmnist task needs dataset_dir in the config or ${DATASET_ENV} in the environment"
        )
    path = Path(raw)
    if not path.is_dir():
        raise ConfigError(f"dataset directory {path} does not exist")
    return path


def _load_image_tasks(cfg: ExperimentConfig, seed: int):
    root = _dataset_dir(cfg)
    train = datasets.load_idx_pair(
        root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte"
    )
    test = datasets.load_idx_pair(
        root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"
    )
    parts = datasets.label_partition(
        train, cfg.m, cfg.labels_per_device, derive_seed(seed, _SEED_TASKS)
    )
    tasks = [learning.HingeTask(X=p.X, y=p.y, classes=train.classes) for p in parts]

    classes = train.classes

    def eval_fn(W: np.ndarray) -> float:
        accs = []
        for i in range(W.shape[0]):
            scores = test.X @ W[i].reshape(classes, -1).T
            accs.append(float((scores.argmax(axis=1) == test.y).mean()))
        return float(np.mean(accs))

    return tasks, eval_fn


def build_env(cfg: ExperimentConfig, seed: int) -> RunEnv:
    """Draw the seed-determined environment: tasks, graph schedule, bandwidths."""
    if cfg.task == "quadratic":
        samples = cfg.samples_per_device or None
        tasks = datasets.synth_quadratic(
            cfg.m, cfg.n, cfg.heterogeneity, derive_seed(seed, _SEED_TASKS), samples=samples
        )
        w_star = learning.global_optimum(tasks)
        eval_fn = None
    else:
        tasks, eval_fn = _load_image_tasks(cfg, seed)
        w_star = None
    base = topology.gen_rgg(
        cfg.m,
        cfg.connectivity,
        derive_seed(seed, _SEED_GRAPH),
        as_density=cfg.connectivity_as_density,
    )
    schedule = topology.TopologySchedule(
        base=base,
        mode=cfg.topology,
        b1=cfg.b1,
        seed=derive_seed(seed, _SEED_GRAPH) + 1,
        subset_prob=cfg.subset_prob,
    )
    bandwidths = datasets.assign_bandwidths(
        cfg.m, cfg.b_M, cfg.sigma_N, derive_seed(seed, _SEED_BANDWIDTH)
    )
    return RunEnv(
        tasks=tasks, schedule=schedule, bandwidths=bandwidths, w_star=w_star, eval_fn=eval_fn
    )


def _trigger_policy(cfg: ExperimentConfig, name: str) -> engine.TriggerPolicy:
    if name == "efhc":
        return engine.TriggerPolicy(kind="efhc", r=cfg.r)
    if name == "gt":
        return engine.TriggerPolicy(kind="gt", r=cfg.r, global_rho=1.0 / cfg.b_M)
    if name == "zt":
        return engine.TriggerPolicy(kind="zt")
    if name == "rg":
        prob = cfg.rg_prob if cfg.rg_prob > 0 else 1.0 / cfg.m
        return engine.TriggerPolicy(kind="rg", gossip_prob=prob)
    raise ConfigError(f"unknown policy {name!r}")


def _step_policy(cfg: ExperimentConfig) -> learning.StepPolicy:
    if cfg.step == "constant":
        return learning.StepPolicy(kind="constant", alpha=cfg.alpha)
    return learning.StepPolicy(
        kind="diminishing", alpha0=cfg.alpha0, gamma=cfg.step_gamma, theta=cfg.theta
    )


def _gamma_policy(cfg: ExperimentConfig) -> learning.StepPolicy | None:
    if cfg.gamma_mode == "step":
        return None
    return learning.StepPolicy(kind="constant", alpha=cfg.gamma_value)


def run_single(
    cfg: ExperimentConfig, policy_name: str, seed: int, *, record_states: bool = False
) -> engine.RunResult:
    """One (policy, seed) simulation under a validated configuration."""
    env = build_env(cfg, seed)
    return engine.run(
        tasks=env.tasks,
        schedule=env.schedule,
        bandwidths=env.bandwidths.b,
        policy=_trigger_policy(cfg, policy_name),
        step_policy=_step_policy(cfg),
        K=cfg.K,
        seed=seed,
        gamma_policy=_gamma_policy(cfg),
        w_star=env.w_star,
        batch_size=cfg.batch_size,
        inclusive=cfg.inclusive_trigger,
        b2=cfg.B2 if cfg.enforce_B2 else None,
        count_connections=cfg.count_connection_exchanges,
        per_device_init=cfg.per_device_init,
        init_scale=cfg.init_scale,
        eval_fn=env.eval_fn,
        eval_every=cfg.eval_every,
        record_states=record_states,
    )


def _summary_row(policy: str, seed: int, trace: engine.MetricsTrace) -> dict:
    last = len(trace) - 1
    return {
        "policy": policy,
        "seed": seed,
        "consensus_error": float(trace.consensus_error[last]) if last >= 0 else float("nan"),
        "optimality_gap": float(trace.optimality_gap[last]) if last >= 0 else float("nan"),
        "total_broadcasts": int(trace.broadcasts.sum()),
        "total_time": float(trace.cumulative_time[last]) if last >= 0 else 0.0,
        "mean_accuracy": float(trace.mean_accuracy[last]) if last >= 0 else float("nan"),
    }


def _run_one(cfg: ExperimentConfig, policy: str, seed: int, run_dir: Path) -> dict:
    result = run_single(cfg, policy, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = replace(cfg, policies=[policy], seeds=[seed])
    (run_dir / "config.txt").write_text(config_text(snapshot))
    result.trace.to_csv(run_dir / "trace.csv")
    topology.write_info_flow(result.info_flow, run_dir / "infoflow.txt")
    return _summary_row(policy, seed, result.trace)


def _write_summary(rows: list[dict], path: Path) -> None:
    by_policy: dict[str, list[dict]] = {}
    for row in rows:
        by_policy.setdefault(row["policy"], []).append(row)
    with open(path, "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row['policy']},{row['seed']},{row['consensus_error']!r},"
                f"{row['optimality_gap']!r},{row['total_broadcasts']},"
                f"{row['total_time']!r},{row['mean_accuracy']!r}\n"
            )
        for policy in sorted(by_policy):
            group = by_policy[policy]
            fh.write(
                f"{policy},mean,{float(np.mean([r['consensus_error'] for r in group]))!r},"
                f"{float(np.mean([r['optimality_gap'] for r in group]))!r},"
                f"{float(np.mean([r['total_broadcasts'] for r in group]))!r},"
                f"{float(np.mean([r['total_time'] for r in group]))!r},"
                f"{float(np.mean([r['mean_accuracy'] for r in group]))!r}\n"
            )


def run_suite(cfg: ExperimentConfig, outdir, jobs: int = 1) -> list[dict]:
    """Run every (policy, seed) pair into numbered run directories.

    A failure stops the suite after writing completed results and a
    ``PARTIAL_RESULTS`` marker naming the failed run.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    specs = [(policy, seed) for policy in cfg.policies for seed in cfg.seeds]
    rows: list[dict] = []
    failure: tuple[str, int, BaseException] | None = None
    if jobs <= 1:
        for policy, seed in specs:
            try:
                rows.append(_run_one(cfg, policy, seed, outdir / f"{policy}-seed{seed}"))
            except Exception as exc:  # noqa: BLE001 - suite must mark partial output
                failure = (policy, seed, exc)
                break
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_run_one, cfg, policy, seed, outdir / f"{policy}-seed{seed}"): (policy, seed)
                for policy, seed in specs
            }
            for fut in concurrent.futures.as_completed(futures):
                policy, seed = futures[fut]
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    if failure is None:
                        failure = (policy, seed, exc)
        rows.sort(key=lambda r: (cfg.policies.index(r["policy"]), cfg.seeds.index(r["seed"])))
    _write_summary(rows, outdir / "summary.csv")
    if failure is not None:
        policy, seed, exc = failure
        (outdir / PARTIAL_MARKER).write_text(
            f"run {policy}-seed{seed} failed: {type(exc).__name__}: {exc}\n"
        )
        raise RuntimeError(f"run {policy}-seed{seed} failed: {exc}") from exc
    return rows


@dataclass
class RunRecord:
    path: Path
    cfg: ExperimentConfig
    policy: str
    seed: int
    trace: engine.MetricsTrace


def discover_runs(suite_dir: Path) -> list[RunRecord]:
    if not suite_dir.is_dir():
        raise ConfigError(f"{suite_dir} is not a directory")
    records = []
    for sub in sorted(p for p in suite_dir.iterdir() if p.is_dir()):
        cfg_path = sub / "config.txt"
        trace_path = sub / "trace.csv"
        if not cfg_path.exists() and not trace_path.exists():
            continue
        missing = [str(p) for p in (cfg_path, trace_path, sub / "infoflow.txt") if not p.exists()]
        if missing:
            raise ConfigError(f"run directory {sub} is missing: {', '.join(missing)}")
        cfg = load_config(cfg_path)
        records.append(
            RunRecord(
                path=sub,
                cfg=cfg,
                policy=cfg.policies[0],
                seed=cfg.seeds[0],
                trace=engine.MetricsTrace.from_csv(trace_path),
            )
        )
    if not records:
        raise ConfigError(f"no completed runs found under {suite_dir}")
    return records


DECAY_FACTOR = 1e-3
SLOPE_BAND = (-0.8, -0.3)
DECAY_MIN_K = 20_000


def verify_suite(suite_dir) -> list[tuple[str, str, str]]:
    """Re-check a finished suite; returns (criterion, status, detail) lines."""
    suite_dir = Path(suite_dir)
    records = discover_runs(suite_dir)
    report: list[tuple[str, str, str]] = []

    # connectivity certification of the recorded information flow
    b2_runs = [r for r in records if r.cfg.enforce_B2]
    if not b2_runs:
        report.append(("connectivity", "SKIPPED", "no run enforced a broadcast period"))
    else:
        bad: list[str] = []
        for rec in b2_runs:
            log = topology.read_info_flow(rec.path / "infoflow.txt")
            b1 = 1 if rec.cfg.topology == "static" else rec.cfg.b1
            B = topology.compute_window_B(b1, rec.cfg.B2)
            try:
                violations = topology.certify_B_connectivity(log, B)
            except ValueError as exc:
                bad.append(f"{rec.path.name}: {exc}")
                continue
            if violations:
                bad.append(f"{rec.path.name}: windows {violations[:5]} not connected at B={B}")
        if bad:
            report.append(("connectivity", "FAIL", "; ".join(bad)))
        else:
            report.append(
                ("connectivity", "PASS", f"{len(b2_runs)} logs certified at their computed B")
            )

    # error decay for the diminishing-step quadratic recipe
    decay_runs = [
        r
        for r in records
        if r.cfg.task == "quadratic"
        and r.cfg.step == "diminishing"
        and r.cfg.theta == 0.5
        and len(r.trace) >= DECAY_MIN_K
    ]
    if not decay_runs:
        report.append(
            ("error-decay", "SKIPPED", f"needs quadratic diminishing runs of K >= {DECAY_MIN_K}")
        )
    else:
        bad = []
        for rec in decay_runs:
            t = rec.trace
            for name, col in (("consensus", t.consensus_error), ("gap", t.optimality_gap)):
                if not col[-1] <= DECAY_FACTOR * col[0]:
                    bad.append(
                        f"{rec.path.name}: {name} {col[-1]:.3e} vs initial {col[0]:.3e}"
                    )
        if bad:
            report.append(("error-decay", "FAIL", "; ".join(bad)))
        else:
            report.append(
                ("error-decay", "PASS",
                 f"{len(decay_runs)} runs dropped both errors below {DECAY_FACTOR} of start")
            )

    # trailing-half decay slope, noise-driven tails only.  Single-run tails are
    # dominated by a handful of effectively independent chunks, so the slope is
    # fit on the curve averaged across runs of equal length (seed replicates).
    slope_runs = [r for r in decay_runs if r.cfg.batch_size > 0]
    if not slope_runs:
        report.append(("decay-slope", "SKIPPED", "needs minibatch runs from the decay recipe"))
    else:
        by_length: dict[int, list[np.ndarray]] = {}
        for rec in slope_runs:
            by_length.setdefault(len(rec.trace), []).append(rec.trace.optimality_gap)
        bad = []
        for length, gaps in sorted(by_length.items()):
            mean_gap = np.mean(gaps, axis=0)
            fit = analysis.fit_rate(mean_gap, length // 2, length - 1)
            if not (SLOPE_BAND[0] <= fit.slope <= SLOPE_BAND[1]):
                bad.append(f"K={length - 1}: slope {fit.slope:.3f} over {len(gaps)} runs")
        if bad:
            report.append(("decay-slope", "FAIL", "; ".join(bad) + f" outside {SLOPE_BAND}"))
        else:
            report.append(
                ("decay-slope", "PASS",
                 f"averaged tail slope within {SLOPE_BAND} ({len(slope_runs)} runs)")
            )

    # plateau positivity for constant-step quadratic runs
    plateau_runs = [
        r for r in records if r.cfg.task == "quadratic" and r.cfg.step == "constant"
    ]
    if not plateau_runs:
        report.append(("plateau", "SKIPPED", "no constant-step quadratic runs"))
    else:
        levels = [analysis.plateau_level(r.trace.optimality_gap) for r in plateau_runs]
        if all(lv > 0 for lv in levels):
            report.append(
                ("plateau", "PASS",
                 f"levels in [{min(levels):.3e}, {max(levels):.3e}] across {len(levels)} runs")
            )
        else:
            report.append(("plateau", "FAIL", "a constant-step run plateaued at zero"))

    by_policy: dict[str, dict[int, RunRecord]] = {}
    for rec in records:
        by_policy.setdefault(rec.policy, {})[rec.seed] = rec

    # event-triggered vs global-threshold at matched transmission time
    if "efhc" in by_policy and "gt" in by_policy:
        shared = sorted(set(by_policy["efhc"]) & set(by_policy["gt"]))
        wins = 0
        for seed in shared:
            ef, gt = by_policy["efhc"][seed], by_policy["gt"][seed]
            use_acc = ef.cfg.task == "fmnist"
            metric = "mean_accuracy" if use_acc else "optimality_gap"
            grid, table = analysis.tradeoff_table(
                {"efhc": ef.trace, "gt": gt.trace}, metric=metric, maximize=use_acc
            )
            a, b = table["efhc"][-1], table["gt"][-1]
            wins += int(a >= b if use_acc else a <= b)
        needed = int(np.ceil(0.8 * len(shared))) if shared else 0
        if shared and wins >= needed:
            report.append(
                ("time-matched", "PASS", f"event-triggered at least as good in {wins}/{len(shared)} seeds")
            )
        elif shared:
            report.append(
                ("time-matched", "FAIL", f"event-triggered better in only {wins}/{len(shared)} seeds")
            )
        else:
            report.append(("time-matched", "SKIPPED", "no seed shared by efhc and gt"))
    else:
        report.append(("time-matched", "SKIPPED", "needs both efhc and gt runs"))

    # event-triggered transmission cost strictly below broadcast-every-iteration
    if "efhc" in by_policy and "zt" in by_policy:
        shared = sorted(set(by_policy["efhc"]) & set(by_policy["zt"]))
        bad = []
        for seed in shared:
            ef = float(np.mean(by_policy["efhc"][seed].trace.transmission_score))
            zt = float(np.mean(by_policy["zt"][seed].trace.transmission_score))
            if not ef < zt:
                bad.append(f"seed {seed}: {ef:.3e} >= {zt:.3e}")
        if not shared:
            report.append(("transmission", "SKIPPED", "no seed shared by efhc and zt"))
        elif bad:
            report.append(("transmission", "FAIL", "; ".join(bad)))
        else:
            report.append(
                ("transmission", "PASS", f"cheaper per iteration in all {len(shared)} seeds")
            )
    else:
        report.append(("transmission", "SKIPPED", "needs both efhc and zt runs"))

    return report


TEMPLATES: dict[str, tuple[str, ExperimentConfig]] = {
    "reference": (
        "every key with its default and a one-line description",
        ExperimentConfig(),
    ),
    "quadratic-diminishing": (
        "convergence of the event-triggered protocol on a synthetic quadratic",
        ExperimentConfig(
            K=20_000,
            seeds=[1, 2, 3, 4, 5],
            policies=["efhc"],
            heterogeneity=3.0,
            batch_size=1,
            per_device_init=True,
            eval_every=0,
        ),
    ),
    "quadratic-constant": (
        "constant-step plateau study on a synthetic quadratic",
        ExperimentConfig(
            K=50_000,
            seeds=[1, 2, 3],
            policies=["efhc"],
            step="constant",
            alpha=0.02,
            heterogeneity=3.0,
            batch_size=1,
            per_device_init=True,
            eval_every=0,
        ),
    ),
    "b2-certification": (
        "forced-broadcast run whose information flow is then certified",
        ExperimentConfig(
            m=6,
            n=4,
            K=60,
            seeds=[1, 2, 3],
            policies=["efhc"],
            topology="cyclic",
            b1=3,
            connectivity=0.8,
            r=1e9,
            enforce_B2=True,
            B2=7,
            eval_every=0,
        ),
    ),
    "tradeoff": (
        "policy comparison at matched cumulative transmission time",
        ExperimentConfig(
            K=4000,
            seeds=[1, 2, 3, 4, 5],
            policies=["efhc", "gt", "zt", "rg"],
            r=1000.0,
            batch_size=1,
            per_device_init=True,
            eval_every=0,
        ),
    ),
    "fmnist": (
        "label-skewed image classification with hinge losses",
        ExperimentConfig(
            task="fmnist",
            K=500,
            seeds=[1],
            policies=["efhc", "zt"],
            batch_size=16,
            labels_per_device=1,
            eval_every=50,
        ),
    ),
}


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    outdir = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    rows = run_suite(cfg, outdir, jobs=args.jobs)
    print(f"{len(rows)} runs completed under {outdir}")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    report = verify_suite(args.suite)
    failed = False
    for name, status, detail in report:
        print(f"{status:7s} {name}: {detail}")
        failed = failed or status == "FAIL"
    return 3 if failed else 0


def _cmd_gen_config(args: argparse.Namespace) -> int:
    if args.template not in TEMPLATES:
        raise ConfigError(
            f"unknown template {args.template!r}, pick from: {', '.join(sorted(TEMPLATES))}"
        )
    description, cfg = TEMPLATES[args.template]
    text = f"# {args.template}: {description}\n\n" + config_text(
        cfg, comments=args.template == "reference"
    )
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_certify(args: argparse.Namespace) -> int:
    try:
        log = topology.read_info_flow(args.infoflow)
    except OSError as exc:
        raise ConfigError(f"cannot read information-flow log: {exc}") from exc
    violations = topology.certify_B_connectivity(log, args.B)
    if violations:
        print(f"NOT CERTIFIED: {len(violations)} windows fail at B={args.B}: {violations[:10]}")
        return 3
    print(f"CERTIFIED: all {len(log) - args.B + 1} windows connected at B={args.B}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="efhc",
        description="event-triggered decentralized learning simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run every (policy, seed) pair of a config")
    p_run.add_argument("config", help="path to a key=value configuration file")
    p_run.add_argument("-o", "--out", help="output directory (default runs/<config name>)")
    p_run.add_argument("-j", "--jobs", type=int, default=1, help="parallel worker processes")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="re-check a finished suite directory")
    p_verify.add_argument("suite", help="directory produced by the run verb")
    p_verify.set_defaults(func=_cmd_verify)

    p_gen = sub.add_parser("gen-config", help="write a starter configuration")
    p_gen.add_argument("--template", required=True, help=", ".join(sorted(TEMPLATES)))
    p_gen.add_argument("-o", "--out", help="write to this path instead of stdout")
    p_gen.set_defaults(func=_cmd_gen_config)

    p_cert = sub.add_parser("certify", help="certify a recorded information-flow log")
    p_cert.add_argument("infoflow", help="file written by the run verb")
    p_cert.add_argument("--B", type=int, required=True, help="window length to certify")
    p_cert.set_defaults(func=_cmd_certify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface anything else as a runtime failure
        traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
