"""Synchronous simulation of event-triggered decentralized learning.

Each iteration runs four phases on the current physical graph:

1. connection: pairs linked for the first time exchange parameters at once;
2. broadcast: a device whose parameters drifted far enough from the last
   broadcast value sends them to every current neighbor, then refreshes its
   reference copy (baseline policies replace this rule);
3. aggregation: every exchange feeds a Metropolis-weighted averaging update,
   folded into a single mixing step per iteration;
4. descent: every device takes a gradient step evaluated at its parameters
   from the start of the iteration.

The recorded trigger vectors are sufficient to rebuild the iteration's mixing
matrix independently, which is what the equivalence tests do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .learning import LocalTask, StepPolicy, local_grad, step_size, stochastic_grad, task_dim
from .mixing import TriggerVector, metropolis_weight
from .topology import Edge, GraphSnapshot, InfoFlowLog, TopologySchedule, snapshot_at

TRACE_HEADER = "k,consensus_error,optimality_gap,broadcasts,transmission_score,cumulative_time,mean_accuracy"

# fixed sub-seed tags so every random stream is derived, never shared
_SEED_INIT = 3
_SEED_GOSSIP = 5
_SEED_GRAD = 7


@dataclass
class DeviceState:
    """One device: current parameters, last broadcast parameters, bandwidth."""

    w: np.ndarray
    w_hat: np.ndarray
    bandwidth: float
    last_broadcast: int = -1

    @property
    def rho(self) -> float:
        """Per-unit transmission cost, the reciprocal bandwidth."""
        return 1.0 / self.bandwidth


@dataclass
class NetworkState:
    """Stacked per-device state plus the previous iteration's edge set."""

    W: np.ndarray
    What: np.ndarray
    bandwidths: np.ndarray
    last_broadcast: np.ndarray
    prev_edges: frozenset[Edge] = field(default_factory=frozenset)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def device(self, i: int) -> DeviceState:
        return DeviceState(
            w=self.W[i],
            w_hat=self.What[i],
            bandwidth=float(self.bandwidths[i]),
            last_broadcast=int(self.last_broadcast[i]),
        )


def init_state(
    n: int,
    bandwidths: np.ndarray,
    seed: int,
    *,
    per_device: bool = False,
    scale: float = 1.0,
) -> NetworkState:
    """Starting point: one shared draw by default, per-device draws on request."""
    m = len(bandwidths)
    rng = np.random.default_rng([seed, _SEED_INIT])
    if per_device:
        W = scale * rng.standard_normal((m, n))
    else:
        W = np.tile(scale * rng.standard_normal(n), (m, 1))
    return NetworkState(
        W=W,
        What=W.copy(),
        bandwidths=np.asarray(bandwidths, dtype=float),
        last_broadcast=np.full(m, -1, dtype=int),
    )


_POLICY_KINDS = ("efhc", "gt", "zt", "rg")


@dataclass(frozen=True)
class TriggerPolicy:
    """Broadcast rule: drift-threshold (per-device or global cost), always, or random.

    * ``efhc``: broadcast when sqrt(1/n) * ||w - w_hat|| reaches r * rho_i * gamma_k
      with the device's own cost rho_i;
    * ``gt``: same test with the shared cost ``global_rho`` for every device;
    * ``zt``: broadcast every iteration;
    * ``rg``: broadcast with probability ``gossip_prob`` (default 1/m).
    """

    kind: str
    r: float = 0.0
    global_rho: float = 0.0
    gossip_prob: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}, expected one of {_POLICY_KINDS}")
        if self.kind in ("efhc", "gt") and self.r <= 0.0:
            raise ValueError(f"r must be positive, got {self.r}")
        if self.kind == "gt" and self.global_rho <= 0.0:
            raise ValueError(f"global_rho must be positive, got {self.global_rho}")
        if self.gossip_prob is not None and not (0.0 < self.gossip_prob <= 1.0):
            raise ValueError(f"gossip_prob must be in (0, 1], got {self.gossip_prob}")


def broadcast_trigger(
    w: np.ndarray,
    w_hat: np.ndarray,
    r: float,
    rho: float,
    gamma_k: float,
    *,
    inclusive: bool = True,
) -> bool:
    """Drift test sqrt(1/n) * ||w - w_hat|| against the decaying budget r * rho * gamma_k.

    The threshold comparison is inclusive by default; ``inclusive=False``
    switches to a strict inequality.
    """
    if r <= 0.0 or rho <= 0.0 or gamma_k <= 0.0:
        raise ValueError("r, rho and gamma_k must all be positive")
    drift = np.linalg.norm(w - w_hat) / np.sqrt(w.size)
    threshold = r * rho * gamma_k
    return bool(drift >= threshold) if inclusive else bool(drift > threshold)


def aggregate(w_i: np.ndarray, received: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Weighted averaging step w_i + sum_j beta_ij (w_j - w_i).

    Weights must leave a positive self-weight, which Metropolis weights always do.
    """
    total = 0.0
    out = w_i.astype(float, copy=True)
    for w_j, beta in received:
        if beta <= 0.0:
            raise ValueError(f"weights must be positive, got {beta}")
        out += beta * (w_j - w_i)
        total += beta
    if total >= 1.0:
        raise ValueError(f"received weights sum to {total}, must stay below 1")
    return out


def transmission_score(
    g: GraphSnapshot,
    triggers: TriggerVector,
    rho: np.ndarray,
    n: int,
    *,
    include_connections: bool = True,
) -> float:
    """Average per-device transmission time of one iteration.

    (1/m) * sum_i (used_edges_at_i / d_i) * rho_i * n, zero for isolated
    devices.  Connection exchanges count by default; with
    ``include_connections=False`` only broadcast-driven edges are charged.
    """
    if n < 1:
        raise ValueError(f"model dimension must be at least 1, got {n}")
    used = triggers.used_edges(g)
    if not include_connections:
        used = frozenset(
            e for e in g.edges if triggers.device[e[0]] or triggers.device[e[1]]
        )
    deg = g.degrees()
    load = np.zeros(g.m)
    for i, j in used:
        load[i] += 1.0
        load[j] += 1.0
    score = 0.0
    for i in range(g.m):
        if deg[i] > 0:
            score += (load[i] / deg[i]) * rho[i] * n
    return score / g.m


@dataclass
class IterationEvents:
    """What happened during one iteration."""

    k: int
    graph: GraphSnapshot
    triggers: TriggerVector
    new_edges: frozenset[Edge]
    used_edges: frozenset[Edge]
    broadcasts: int
    score: float


@dataclass
class RunRngs:
    """Independent random streams: one per-device gradient stream, one gossip stream."""

    grad: list[np.random.Generator]
    gossip: np.random.Generator

    @classmethod
    def for_seed(cls, seed: int, m: int) -> "RunRngs":
        return cls(
            grad=[np.random.default_rng([seed, _SEED_GRAD, i]) for i in range(m)],
            gossip=np.random.default_rng([seed, _SEED_GOSSIP]),
        )


def _eval_triggers(
    state: NetworkState,
    k: int,
    policy: TriggerPolicy,
    gamma_k: float,
    rngs: RunRngs,
    *,
    inclusive: bool,
    b2: int | None,
) -> np.ndarray:
    m = state.m
    if policy.kind == "zt":
        v = np.ones(m, dtype=bool)
    elif policy.kind == "rg":
        prob = policy.gossip_prob if policy.gossip_prob is not None else 1.0 / m
        v = rngs.gossip.random(m) < prob
    else:
        drift = np.linalg.norm(state.W - state.What, axis=1) / np.sqrt(state.n)
        if policy.kind == "efhc":
            rho = 1.0 / state.bandwidths
        else:  # gt
            rho = np.full(m, policy.global_rho)
        threshold = policy.r * rho * gamma_k
        v = drift >= threshold if inclusive else drift > threshold
    if b2 is not None:
        # a device silent for b2 iterations is forced to broadcast
        v = v | (k - state.last_broadcast >= b2)
    return v


def iterate(
    state: NetworkState,
    k: int,
    schedule: TopologySchedule,
    policy: TriggerPolicy,
    tasks: Sequence[LocalTask],
    step_policy: StepPolicy,
    rngs: RunRngs,
    *,
    gamma_policy: StepPolicy | None = None,
    batch_size: int = 0,
    inclusive: bool = True,
    b2: int | None = None,
    count_connections: bool = True,
) -> tuple[NetworkState, IterationEvents]:
    """One synchronous protocol iteration; returns the new state and its events.

    ``batch_size=0`` runs exact local gradients, anything positive draws
    seeded minibatches.  Triggers, the reference copies, and the gradients all
    read the parameters from the start of the iteration.
    """
    g = snapshot_at(schedule, k)
    if g.m != state.m:
        raise ValueError(f"graph has {g.m} devices, state has {state.m}")
    alpha_k = step_size(step_policy, k)
    gamma_k = step_size(gamma_policy if gamma_policy is not None else step_policy, k)
    v = _eval_triggers(state, k, policy, gamma_k, rngs, inclusive=inclusive, b2=b2)
    new_edges = frozenset(g.edges - state.prev_edges)
    triggers = TriggerVector(device=v, connection_edges=new_edges)
    used = triggers.used_edges(g)

    deg = g.degrees()
    W = state.W
    W_next = W.copy()
    for i, j in used:
        beta = metropolis_weight(int(deg[i]), int(deg[j]))
        diff = W[j] - W[i]
        W_next[i] += beta * diff
        W_next[j] -= beta * diff
    for i, task in enumerate(tasks):
        if batch_size == 0:
            grad = local_grad(task, W[i])
        else:
            grad = stochastic_grad(task, W[i], batch_size, rngs.grad[i])
        W_next[i] -= alpha_k * grad

    What_next = state.What.copy()
    What_next[v] = W[v]
    last = state.last_broadcast.copy()
    last[v] = k

    score = transmission_score(
        g, triggers, 1.0 / state.bandwidths, state.n, include_connections=count_connections
    )
    events = IterationEvents(
        k=k,
        graph=g,
        triggers=triggers,
        new_edges=new_edges,
        used_edges=used,
        broadcasts=int(v.sum()),
        score=score,
    )
    new_state = NetworkState(
        W=W_next,
        What=What_next,
        bandwidths=state.bandwidths,
        last_broadcast=last,
        prev_edges=frozenset(g.edges),
    )
    return new_state, events


@dataclass
class MetricsTrace:
    """Per-iteration metrics; row k describes the state entering iteration k."""

    k: np.ndarray
    consensus_error: np.ndarray
    optimality_gap: np.ndarray
    broadcasts: np.ndarray
    transmission_score: np.ndarray
    cumulative_time: np.ndarray
    mean_accuracy: np.ndarray

    def __len__(self) -> int:
        return self.k.size

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            for t in range(len(self)):
                fh.write(
                    f"{int(self.k[t])},{float(self.consensus_error[t])!r},"
                    f"{float(self.optimality_gap[t])!r},{int(self.broadcasts[t])},"
                    f"{float(self.transmission_score[t])!r},{float(self.cumulative_time[t])!r},"
                    f"{float(self.mean_accuracy[t])!r}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "MetricsTrace":
        with open(path) as fh:
            lines = fh.read().strip().splitlines()
        if not lines or lines[0] != TRACE_HEADER:
            raise ValueError(f"{path} does not start with the expected trace header")
        cols: list[list[float]] = [[] for _ in range(7)]
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != 7:
                raise ValueError(f"bad trace row: {ln!r}")
            for c, p in enumerate(parts):
                cols[c].append(float(p))
        return cls(
            k=np.array(cols[0], dtype=int),
            consensus_error=np.array(cols[1]),
            optimality_gap=np.array(cols[2]),
            broadcasts=np.array(cols[3], dtype=int),
            transmission_score=np.array(cols[4]),
            cumulative_time=np.array(cols[5]),
            mean_accuracy=np.array(cols[6]),
        )


@dataclass
class RunResult:
    """Everything a run produced, enough to replay or audit it."""

    trace: MetricsTrace
    info_flow: InfoFlowLog
    triggers: list[TriggerVector]
    state: NetworkState
    device_broadcasts: np.ndarray
    W_history: np.ndarray | None = None


def consensus_error(W: np.ndarray) -> float:
    """Squared Frobenius distance of the rows from their mean."""
    return float(((W - W.mean(axis=0)) ** 2).sum())


def optimality_gap(W: np.ndarray, w_star: np.ndarray | None) -> float:
    """Squared distance of the row average from the known optimum, else nan."""
    if w_star is None:
        return float("nan")
    d = W.mean(axis=0) - w_star
    return float(d @ d)


def run(
    tasks: Sequence[LocalTask],
    schedule: TopologySchedule,
    bandwidths: np.ndarray,
    policy: TriggerPolicy,
    step_policy: StepPolicy,
    K: int,
    seed: int,
    *,
    gamma_policy: StepPolicy | None = None,
    w_star: np.ndarray | None = None,
    batch_size: int = 0,
    inclusive: bool = True,
    b2: int | None = None,
    count_connections: bool = True,
    per_device_init: bool = False,
    init_scale: float = 1.0,
    eval_fn: Callable[[np.ndarray], float] | None = None,
    eval_every: int = 100,
    record_states: bool = False,
) -> RunResult:
    """Simulate K iterations and collect the full audit trail.

    The result is a deterministic function of the arguments; in particular
    two runs with the same seed produce identical traces.
    """
    m = len(tasks)
    if m != len(bandwidths):
        raise ValueError(f"{m} tasks but {len(bandwidths)} bandwidths")
    if m != schedule.base.m:
        raise ValueError(f"{m} tasks but schedule covers {schedule.base.m} devices")
    if K < 0:
        raise ValueError(f"K must be non-negative, got {K}")
    n = task_dim(tasks[0])
    for t in tasks:
        if task_dim(t) != n:
            raise ValueError("all tasks must share the model dimension")

    state = init_state(n, bandwidths, seed, per_device=per_device_init, scale=init_scale)
    rngs = RunRngs.for_seed(seed, m)
    info = InfoFlowLog(m)
    triggers: list[TriggerVector] = []
    history = np.empty((K + 1, m, n)) if record_states else None
    if history is not None:
        history[0] = state.W

    cols = {name: np.zeros(K) for name in (
        "consensus_error", "optimality_gap", "transmission_score", "cumulative_time", "mean_accuracy",
    )}
    broadcasts = np.zeros(K, dtype=int)
    device_broadcasts = np.zeros(m, dtype=int)
    cum_time = 0.0
    acc = float("nan")
    for k in range(K):
        cols["consensus_error"][k] = consensus_error(state.W)
        cols["optimality_gap"][k] = optimality_gap(state.W, w_star)
        if eval_fn is not None and eval_every > 0 and k % eval_every == 0:
            acc = eval_fn(state.W)
        cols["mean_accuracy"][k] = acc
        state, events = iterate(
            state, k, schedule, policy, tasks, step_policy, rngs,
            gamma_policy=gamma_policy, batch_size=batch_size, inclusive=inclusive,
            b2=b2, count_connections=count_connections,
        )
        info.used.append(events.used_edges)
        triggers.append(events.triggers)
        broadcasts[k] = events.broadcasts
        device_broadcasts += events.triggers.device
        cum_time += events.score
        cols["transmission_score"][k] = events.score
        cols["cumulative_time"][k] = cum_time
        if history is not None:
            history[k + 1] = state.W

    trace = MetricsTrace(
        k=np.arange(K, dtype=int),
        consensus_error=cols["consensus_error"],
        optimality_gap=cols["optimality_gap"],
        broadcasts=broadcasts,
        transmission_score=cols["transmission_score"],
        cumulative_time=cols["cumulative_time"],
        mean_accuracy=cols["mean_accuracy"],
    )
    return RunResult(
        trace=trace,
        info_flow=info,
        triggers=triggers,
        state=state,
        device_broadcasts=device_broadcasts,
        W_history=history,
    )
