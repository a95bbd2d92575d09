"""Local objectives, gradient oracles, and step-size schedules.

Two task families: least-squares (the verification workhorse, with a closed
form global optimum) and multiclass hinge with a small L2 term that keeps the
objective strongly convex.  Stochastic gradients are minibatch estimates
scaled so that a full batch reproduces the exact gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class QuadraticTask:
    """Least squares 0.5 * ||A w - b||^2; rows of A are the local samples."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if self.A.ndim != 2 or self.b.ndim != 1:
            raise ValueError("A must be 2-d and b 1-d")
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError(f"row mismatch: A has {self.A.shape[0]}, b has {self.b.shape[0]}")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def count(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class HingeTask:
    """Multiclass hinge over local samples plus (l2/2) * ||w||^2.

    The parameter vector is the flattened (classes, features) score matrix.
    """

    X: np.ndarray
    y: np.ndarray
    classes: int
    l2: float = 1e-3

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ValueError("X must be 2-d and y 1-d")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"row mismatch: X has {self.X.shape[0]}, y has {self.y.shape[0]}")
        if self.classes < 2:
            raise ValueError(f"need at least two classes, got {self.classes}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise ValueError("labels out of range")
        if self.l2 < 0.0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")

    @property
    def dim(self) -> int:
        return self.classes * self.X.shape[1]

    @property
    def count(self) -> int:
        return self.X.shape[0]


LocalTask = Union[QuadraticTask, HingeTask]


def task_dim(task: LocalTask) -> int:
    return task.dim


def local_loss(task: LocalTask, w: np.ndarray) -> float:
    if isinstance(task, QuadraticTask):
        r = task.A @ w - task.b
        return 0.5 * float(r @ r)
    if isinstance(task, HingeTask):
        W = w.reshape(task.classes, -1)
        scores = task.X @ W.T
        margins = 1.0 + scores - scores[np.arange(task.count), task.y][:, None]
        margins[np.arange(task.count), task.y] = 0.0
        return float(np.maximum(margins, 0.0).sum()) + 0.5 * task.l2 * float(w @ w)
    raise TypeError(f"unsupported task type {type(task).__name__}")


def local_grad(task: LocalTask, w: np.ndarray) -> np.ndarray:
    """Exact gradient of local_loss; at hinge ties the zero element is used."""
    if isinstance(task, QuadraticTask):
        return task.A.T @ (task.A @ w - task.b)
    if isinstance(task, HingeTask):
        return _hinge_grad(task, w, np.arange(task.count)) + task.l2 * w
    raise TypeError(f"unsupported task type {type(task).__name__}")


def _hinge_grad(task: HingeTask, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # subgradient of the margin sum over the selected samples, without the L2 part
    X = task.X[idx]
    y = task.y[idx]
    n = X.shape[0]
    W = w.reshape(task.classes, -1)
    scores = X @ W.T
    margins = 1.0 + scores - scores[np.arange(n), y][:, None]
    margins[np.arange(n), y] = 0.0
    active = (margins > 0.0).astype(float)
    active[np.arange(n), y] = -active.sum(axis=1)
    return (active.T @ X).reshape(-1)


def stochastic_grad(
    task: LocalTask, w: np.ndarray, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Unbiased gradient estimate from a uniform minibatch without replacement.

    Scaled by count/batch so that batch_size == count returns local_grad
    exactly; any regularizer enters exactly rather than being sampled.
    """
    count = task.count
    if count == 0:
        raise ValueError("task has no data points")
    if not (1 <= batch_size <= count):
        raise ValueError(f"batch_size must be in [1, {count}], got {batch_size}")
    idx = rng.choice(count, size=batch_size, replace=False)
    scale = count / batch_size
    if isinstance(task, QuadraticTask):
        A = task.A[idx]
        return scale * (A.T @ (A @ w - task.b[idx]))
    if isinstance(task, HingeTask):
        return scale * _hinge_grad(task, w, idx) + task.l2 * w
    raise TypeError(f"unsupported task type {type(task).__name__}")


@dataclass(frozen=True)
class StepPolicy:
    """Step-size schedule: constant alpha, or alpha0 / (1 + k/gamma)^theta."""

    kind: str = "diminishing"
    alpha: float = 0.01
    alpha0: float = 0.1
    gamma: float = 1.0
    theta: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "diminishing"):
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.kind == "constant" and self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.kind == "diminishing":
            if self.alpha0 <= 0.0 or self.gamma <= 0.0:
                raise ValueError("alpha0 and gamma must be positive")
            if not (0.5 <= self.theta <= 1.0):
                raise ValueError(f"theta must be in [0.5, 1], got {self.theta}")


def step_size(policy: StepPolicy, k: int) -> float:
    if k < 0:
        raise ValueError(f"iteration index must be non-negative, got {k}")
    if policy.kind == "constant":
        return policy.alpha
    return policy.alpha0 / (1.0 + k / policy.gamma) ** policy.theta


def global_optimum(tasks: Sequence[LocalTask]) -> np.ndarray:
    """Closed-form minimizer of the average of quadratic local losses."""
    if not tasks:
        raise ValueError("need at least one task")
    for t in tasks:
        if not isinstance(t, QuadraticTask):
            raise TypeError("global optimum is only available for quadratic tasks")
    n = tasks[0].dim
    H = np.zeros((n, n))
    c = np.zeros(n)
    for t in tasks:
        if t.dim != n:
            raise ValueError(f"dimension mismatch: {t.dim} != {n}")
        H += t.A.T @ t.A
        c += t.A.T @ t.b
    return np.linalg.solve(H, c)


def global_grad(tasks: Sequence[LocalTask], w: np.ndarray) -> np.ndarray:
    """Gradient of the average objective (1/m) * sum of local losses."""
    g = np.zeros_like(w)
    for t in tasks:
        g += local_grad(t, w)
    return g / len(tasks)


@dataclass(frozen=True)
class ConstantEstimates:
    """Empirical smoothness L, strong convexity mu, and gradient diversity delta."""

    L: float
    mu: float
    delta: float


def estimate_constants(
    tasks: Sequence[LocalTask], probes: Sequence[np.ndarray]
) -> ConstantEstimates:
    """Probe-based estimates of the objective constants.

    L is the largest gradient-difference ratio over probe pairs, mu the
    smallest inner-product ratio, delta the largest deviation of a local
    gradient from the average gradient at any probe.
    """
    if len(probes) < 2:
        raise ValueError("need at least two probe points")
    grads = [[local_grad(t, w) for w in probes] for t in tasks]
    L = 0.0
    mu = np.inf
    for dev in grads:
        for a in range(len(probes)):
            for b in range(a + 1, len(probes)):
                dw = probes[a] - probes[b]
                dist2 = float(dw @ dw)
                if dist2 == 0.0:
                    continue
                dg = dev[a] - dev[b]
                L = max(L, float(np.linalg.norm(dg)) / np.sqrt(dist2))
                mu = min(mu, float(dg @ dw) / dist2)
    delta = 0.0
    for p in range(len(probes)):
        mean = sum(dev[p] for dev in grads) / len(tasks)
        for dev in grads:
            delta = max(delta, float(np.linalg.norm(dev[p] - mean)))
    return ConstantEstimates(L=L, mu=float(mu), delta=delta)
