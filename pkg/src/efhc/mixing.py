"""Doubly stochastic transition matrices built from broadcast triggers.

An edge carries parameters in a given iteration when at least one endpoint
broadcast, or when the pair connected for the first time that iteration.
Metropolis weights keep the resulting matrix symmetric and doubly stochastic
with a strictly positive diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Edge, GraphSnapshot

TransitionMatrix = np.ndarray


@dataclass
class TriggerVector:
    """Broadcast indicators for one iteration.

    ``device[i]`` is True when device i broadcast to all its neighbors.
    ``connection_edges`` holds edges that exchanged because they appeared
    this iteration, independent of any broadcast.
    """

    device: np.ndarray
    connection_edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        self.device = np.asarray(self.device, dtype=bool)
        if self.device.ndim != 1:
            raise ValueError("device indicators must be a flat boolean vector")

    @property
    def m(self) -> int:
        return self.device.size

    def used_edges(self, g: GraphSnapshot) -> frozenset[Edge]:
        """Edges of g over which parameters moved this iteration."""
        if g.m != self.m:
            raise ValueError(f"device count mismatch: graph {g.m}, triggers {self.m}")
        if not self.connection_edges <= g.edges:
            raise ValueError("connection edges must be edges of the physical graph")
        used = {e for e in g.edges if self.device[e[0]] or self.device[e[1]]}
        return frozenset(used | self.connection_edges)


def metropolis_weight(d_i: int, d_j: int) -> float:
    """min(1/(1+d_i), 1/(1+d_j)) for adjacent devices with degrees d_i, d_j."""
    if d_i < 1 or d_j < 1:
        raise ValueError(f"adjacent devices have degree >= 1, got ({d_i}, {d_j})")
    return min(1.0 / (1.0 + d_i), 1.0 / (1.0 + d_j))


def build_transition(g: GraphSnapshot, triggers: TriggerVector) -> TransitionMatrix:
    """Mixing matrix for one iteration: off-diagonal weights on used edges,
    diagonal makes each row sum to one."""
    used = triggers.used_edges(g)
    deg = g.degrees()
    P = np.zeros((g.m, g.m))
    for i, j in used:
        beta = metropolis_weight(int(deg[i]), int(deg[j]))
        P[i, j] = beta
        P[j, i] = beta
    for i in range(g.m):
        P[i, i] = 1.0 - P[i].sum()
    return P


def validate_stochasticity(P: TransitionMatrix, tol: float = 1e-12) -> bool:
    """Rows and columns sum to one, symmetric, strictly positive diagonal."""
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {P.shape}")
    if np.abs(P.sum(axis=1) - 1.0).max() > tol:
        return False
    if np.abs(P.sum(axis=0) - 1.0).max() > tol:
        return False
    if np.abs(P - P.T).max() > tol:
        return False
    if np.diag(P).min() <= 0.0:
        return False
    return True


def window_product(matrices) -> TransitionMatrix:
    """Product of per-iteration matrices supplied newest first.

    window_product([P_k, P_{k-1}, ..., P_s]) = P_k @ P_{k-1} @ ... @ P_s.
    """
    mats = list(matrices)
    if not mats:
        raise ValueError("need at least one matrix")
    shape = mats[0].shape
    for P in mats:
        if P.shape != shape:
            raise ValueError(f"shape mismatch in window: {P.shape} != {shape}")
    out = mats[0]
    for P in mats[1:]:
        out = out @ P
    return out


def consensus_spectral_norm(
    P: TransitionMatrix, tol: float = 1e-10, max_iter: int = 10_000
) -> float:
    """Largest singular value of P restricted to the disagreement subspace.

    The consensus direction is deflated by subtracting the averaging matrix;
    power iteration on Q^T Q then yields the top singular value of the
    remainder.  For any doubly stochastic P the result is at most 1, with
    equality exactly when the matrix splits into non-communicating blocks.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {P.shape}")
    m = P.shape[0]
    Q = P - np.full((m, m), 1.0 / m)
    S = Q.T @ Q
    rng = np.random.default_rng(0)
    x = rng.standard_normal(m)
    x /= np.linalg.norm(x)
    lam = 0.0
    stable = 0
    for _ in range(max_iter):
        y = S @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        new = float(x @ (S @ x))
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            stable += 1
            if stable >= 2:
                return float(np.sqrt(max(new, 0.0)))
        else:
            stable = 0
        lam = new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")
