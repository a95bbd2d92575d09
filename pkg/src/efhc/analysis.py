"""Post-hoc checks on finished traces: rate fits, plateaus, bound checks,
and communication/accuracy tradeoff tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .engine import MetricsTrace


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log(value) against log(iteration)."""

    slope: float
    intercept: float
    k_lo: int
    k_hi: int
    residual_rms: float


def fit_rate(values: np.ndarray, k_lo: int, k_hi: int) -> RateFit:
    """Fit values[k] ~ exp(intercept) * k**slope over the window [k_lo, k_hi]."""
    values = np.asarray(values, dtype=float)
    if not (0 < k_lo < k_hi):
        raise ValueError(f"need 0 < k_lo < k_hi, got [{k_lo}, {k_hi}]")
    if k_hi >= values.size:
        raise ValueError(f"window end {k_hi} beyond trace length {values.size}")
    if k_hi - k_lo + 1 < 10:
        raise ValueError(f"window [{k_lo}, {k_hi}] has fewer than 10 samples")
    ks = np.arange(k_lo, k_hi + 1)
    window = values[k_lo : k_hi + 1]
    if (window <= 0.0).any() or not np.isfinite(window).all():
        raise ValueError("all window values must be finite and positive")
    slope, intercept = np.polyfit(np.log(ks), np.log(window), 1)
    resid = np.log(window) - (slope * np.log(ks) + intercept)
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        k_lo=k_lo,
        k_hi=k_hi,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def plateau_level(values: np.ndarray, tail_fraction: float = 0.25) -> float:
    """Median of the trailing fraction of a trace."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("trace is empty")
    if not (0.0 < tail_fraction <= 0.5):
        raise ValueError(f"tail_fraction must be in (0, 0.5], got {tail_fraction}")
    tail = values[-max(1, int(round(tail_fraction * values.size))) :]
    return float(np.median(tail))


def bernoulli_bound_check(zetas: Sequence[float], p: float, s: int, k: int) -> bool:
    """Check prod_{r=s}^{k} (1 - zeta_r)^p <= 1 / (p * sum_{r=s}^{k} zeta_r)."""
    if p < 1.0:
        raise ValueError(f"p must be at least 1, got {p}")
    if not (0 <= s <= k):
        raise ValueError(f"need 0 <= s <= k, got s={s}, k={k}")
    if k >= len(zetas):
        raise ValueError(f"k={k} beyond sequence length {len(zetas)}")
    window = np.asarray(zetas[s : k + 1], dtype=float)
    if (window <= 0.0).any() or (window > 1.0).any():
        raise ValueError("all zeta values must lie in (0, 1]")
    lhs = float(np.prod((1.0 - window) ** p))
    rhs = 1.0 / (p * float(window.sum()))
    return lhs <= rhs


def tradeoff_table(
    traces: Mapping[str, MetricsTrace],
    metric: str = "optimality_gap",
    points: int = 50,
    *,
    maximize: bool = False,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Best metric value reached by each policy, sampled on a shared time grid.

    The grid spans up to the smallest final cumulative transmission time so
    every policy is defined at every grid point.  Returns (grid, per-policy
    best-by-time arrays).
    """
    if not traces:
        raise ValueError("need at least one trace")
    if points < 1:
        raise ValueError(f"points must be at least 1, got {points}")
    prepared: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    t_end = np.inf
    for name, trace in traces.items():
        t = np.asarray(trace.cumulative_time, dtype=float)
        v = np.asarray(getattr(trace, metric), dtype=float)
        keep = np.isfinite(v)
        if not keep.any():
            raise ValueError(f"trace {name!r} has no finite {metric} values")
        t, v = t[keep], v[keep]
        best = np.maximum.accumulate(v) if maximize else np.minimum.accumulate(v)
        prepared[name] = (t, best)
        t_end = min(t_end, float(t[-1]))
    grid = np.linspace(t_end / points, t_end, points)
    table: dict[str, np.ndarray] = {}
    for name, (t, best) in prepared.items():
        idx = np.searchsorted(t, grid, side="right") - 1
        vals = np.where(idx >= 0, best[np.maximum(idx, 0)], np.nan)
        table[name] = vals
    return grid, table


def tradeoff_to_csv(grid: np.ndarray, table: Mapping[str, np.ndarray], path) -> None:
    names = sorted(table)
    with open(path, "w") as fh:
        fh.write("time," + ",".join(names) + "\n")
        for r in range(len(grid)):
            row = [repr(float(grid[r]))] + [repr(float(table[n][r])) for n in names]
            fh.write(",".join(row) + "\n")
