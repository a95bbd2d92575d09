"""Time-varying communication graphs.

Generation of random geometric graphs, deterministic per-iteration schedules,
window unions, and B-connectivity certification of recorded information flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Edge = tuple[int, int]


def _ordered(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class GraphSnapshot:
    """Undirected graph on devices 0..m-1 at a single iteration.

    Edges are stored as (i, j) pairs with i < j; no self-loops.
    """

    m: int
    edges: frozenset[Edge]

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"need at least one device, got m={self.m}")
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop ({i}, {j}) is not allowed")
            if not (0 <= i < j < self.m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={self.m}")

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[tuple[int, int]]) -> "GraphSnapshot":
        return cls(m, frozenset(_ordered(i, j) for i, j in edges))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def has_edge(self, i: int, j: int) -> bool:
        return _ordered(i, j) in self.edges


def is_connected(g: GraphSnapshot) -> bool:
    """Breadth-first reachability of every device from device 0."""
    if g.m == 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.m)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = np.zeros(g.m, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


def union_graph(snapshots: Sequence[GraphSnapshot]) -> GraphSnapshot:
    """Edge-set union of snapshots on the same device set."""
    if not snapshots:
        raise ValueError("need at least one snapshot")
    m = snapshots[0].m
    for g in snapshots:
        if g.m != m:
            raise ValueError(f"device count mismatch: {g.m} != {m}")
    edges: set[Edge] = set()
    for g in snapshots:
        edges |= g.edges
    return GraphSnapshot(m, frozenset(edges))


def gen_rgg(
    m: int,
    connectivity: float,
    seed: int,
    *,
    as_density: bool = False,
    max_attempts: int = 1000,
    return_attempts: bool = False,
):
    """Connected random geometric graph on the unit square.

    Devices are placed uniformly at random; pairs closer than a radius are
    linked.  By default ``connectivity`` is the radius itself; with
    ``as_density`` it is the target fraction of linked pairs and the radius
    is the matching distance quantile.  Disconnected draws are resampled with
    an incremented sub-seed up to ``max_attempts`` times.
    """
    if m < 2:
        raise ValueError(f"need at least two devices, got m={m}")
    if connectivity <= 0.0:
        raise ValueError(f"connectivity must be positive, got {connectivity}")
    if as_density and connectivity > 1.0:
        raise ValueError(f"edge density must be in (0, 1], got {connectivity}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        pts = rng.random((m, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        pairs = dist[np.triu_indices(m, k=1)]
        radius = float(np.quantile(pairs, connectivity)) if as_density else connectivity
        edges = set()
        for i in range(m):
            for j in range(i + 1, m):
                if dist[i, j] <= radius:
                    edges.add((i, j))
        g = GraphSnapshot(m, frozenset(edges))
        if is_connected(g):
            return (g, attempt) if return_attempts else g
    raise RuntimeError(
        f"no connected geometric graph after {max_attempts} draws "
        f"(m={m}, connectivity={connectivity}); raise connectivity or the cap"
    )


def _spanning_tree(g: GraphSnapshot) -> list[Edge]:
    # BFS tree from device 0; assumes g connected
    adj: list[list[int]] = [[] for _ in range(g.m)]
    for i, j in sorted(g.edges):
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * g.m
    seen[0] = True
    queue = [0]
    tree: list[Edge] = []
    while queue:
        u = queue.pop(0)
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                tree.append(_ordered(u, v))
                queue.append(v)
    return tree


_MODES = ("static", "cyclic", "random-subset")


@dataclass(frozen=True)
class TopologySchedule:
    """Deterministic map from iteration index to physical graph snapshot.

    Modes:

    * ``static``: every iteration sees ``base`` unchanged.
    * ``cyclic``: the edges of ``base`` are partitioned round-robin into
      ``b1`` groups; iteration k activates group k mod b1, so any window of
      b1 consecutive snapshots unions to ``base``.
    * ``random-subset``: each edge of ``base`` is kept independently with
      probability ``subset_prob`` (seeded per iteration); every b1-th
      iteration is repaired with spanning-tree edges so that every window of
      b1 consecutive snapshots has a connected union.
    """

    base: GraphSnapshot
    mode: str = "static"
    b1: int = 1
    seed: int = 0
    subset_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {_MODES}")
        if self.b1 < 1:
            raise ValueError(f"b1 must be at least 1, got {self.b1}")
        if not is_connected(self.base):
            raise ValueError("base graph must be connected")
        if self.mode == "random-subset" and not (0.0 < self.subset_prob <= 1.0):
            raise ValueError(f"subset_prob must be in (0, 1], got {self.subset_prob}")

    @property
    def effective_b1(self) -> int:
        """Window length over which snapshot unions are guaranteed connected."""
        return 1 if self.mode == "static" else self.b1

    def _cyclic_groups(self) -> list[set[Edge]]:
        groups: list[set[Edge]] = [set() for _ in range(self.b1)]
        for idx, e in enumerate(sorted(self.base.edges)):
            groups[idx % self.b1].add(e)
        return groups


def snapshot_at(schedule: TopologySchedule, k: int) -> GraphSnapshot:
    """Physical graph at iteration k; pure function of (schedule, k)."""
    if k < 0:
        raise ValueError(f"iteration index must be non-negative, got {k}")
    if schedule.mode == "static":
        return schedule.base
    if schedule.mode == "cyclic":
        group = schedule._cyclic_groups()[k % schedule.b1]
        return GraphSnapshot(schedule.base.m, frozenset(group))
    # random-subset
    rng = np.random.default_rng([schedule.seed, k])
    kept = set()
    for e in sorted(schedule.base.edges):
        if rng.random() < schedule.subset_prob:
            kept.add(e)
    if k % schedule.b1 == schedule.b1 - 1:
        g = GraphSnapshot(schedule.base.m, frozenset(kept))
        if not is_connected(g):
            # join components with base spanning-tree edges
            parent = list(range(schedule.base.m))

            def find(x: int) -> int:
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for i, j in kept:
                parent[find(i)] = find(j)
            for i, j in _spanning_tree(schedule.base):
                if find(i) != find(j):
                    parent[find(i)] = find(j)
                    kept.add((i, j))
    return GraphSnapshot(schedule.base.m, frozenset(kept))


def compute_window_B(b1: int, b2: int) -> int:
    """Connectivity window implied by physical window b1 and trigger period b2.

    Returns (l + 2) * b1 where l is the unique integer with
    l * b1 <= b2 <= (l + 1) * b1 - 1.
    """
    if b1 < 1 or b2 < 1:
        raise ValueError(f"window parameters must be at least 1, got b1={b1}, b2={b2}")
    return (b2 // b1 + 2) * b1


@dataclass
class InfoFlowLog:
    """Per-iteration record of the edges over which parameters actually moved."""

    m: int
    used: list[frozenset[Edge]] = field(default_factory=list)

    def append(self, edges: Iterable[tuple[int, int]]) -> None:
        self.used.append(frozenset(_ordered(i, j) for i, j in edges))

    def __len__(self) -> int:
        return len(self.used)

    def snapshot(self, k: int) -> GraphSnapshot:
        return GraphSnapshot(self.m, self.used[k])


def certify_B_connectivity(log: InfoFlowLog, B: int) -> list[int]:
    """Window starts k where the union of used edges over [k, k+B-1] is NOT connected.

    An empty list certifies the log as B-connected.
    """
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    if len(log) < B:
        raise ValueError(f"log covers {len(log)} iterations, need at least B={B}")
    violations = []
    for k in range(len(log) - B + 1):
        window = union_graph([log.snapshot(s) for s in range(k, k + B)])
        if not is_connected(window):
            violations.append(k)
    return violations


def snapshot_to_text(g: GraphSnapshot) -> str:
    """Edge-list form: first line ``m <count>``, then one ``i j`` line per edge."""
    lines = [f"m {g.m}"]
    for i, j in sorted(g.edges):
        lines.append(f"{i} {j}")
    return "\n".join(lines) + "\n"


def snapshot_from_text(text: str) -> GraphSnapshot:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("m "):
        raise ValueError("edge list must start with a 'm <count>' line")
    try:
        m = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad device count line: {lines[0]!r}") from exc
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"bad edge line: {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return GraphSnapshot.from_edges(m, edges)


def write_info_flow(log: InfoFlowLog, path) -> None:
    """One edge-list block per iteration, blocks separated by blank lines."""
    blocks = [snapshot_to_text(log.snapshot(k)) for k in range(len(log))]
    with open(path, "w") as fh:
        fh.write("\n".join(blocks))


def read_info_flow(path) -> InfoFlowLog:
    with open(path) as fh:
        text = fh.read()
    blocks = [b for b in text.split("\n\n") if b.strip()]
    if not blocks:
        raise ValueError(f"no iteration blocks in {path}")
    snaps = [snapshot_from_text(b) for b in blocks]
    m = snaps[0].m
    for g in snaps:
        if g.m != m:
            raise ValueError(f"device count changes mid-log: {g.m} != {m}")
    log = InfoFlowLog(m)
    for g in snaps:
        log.used.append(g.edges)
    return log
