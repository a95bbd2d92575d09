"""Task construction: synthetic quadratics, label-skewed partitions, IDX files,
and per-device bandwidth draws."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .learning import QuadraticTask

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    """Flat feature rows with integer labels in [0, classes)."""

    X: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ValueError("X must be 2-d and y 1-d")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"row mismatch: X has {self.X.shape[0]}, y has {self.y.shape[0]}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class BandwidthProfile:
    """Per-device bandwidths drawn around a nominal value b_M."""

    b: np.ndarray
    b_M: float
    sigma_N: float

    @property
    def rho(self) -> np.ndarray:
        """Per-unit transmission cost, the reciprocal bandwidth."""
        return 1.0 / self.b


def synth_quadratic(
    m: int,
    n: int,
    heterogeneity: float,
    seed: int,
    *,
    samples: int | None = None,
) -> list[QuadraticTask]:
    """Per-device least-squares tasks with tunable disagreement.

    Each device blends a shared Gaussian matrix with its own draw, weighted by
    ``heterogeneity``, then the spectrum is normalized into [0.5, 1] so every
    task is well conditioned.  Targets are b_i = A_i (w0 + heterogeneity u_i)
    with unit perturbations u_i.  At heterogeneity zero all devices hold the
    same task, so local gradients agree everywhere.
    """
    if m < 1:
        raise ValueError(f"need at least one device, got m={m}")
    if n < 1:
        raise ValueError(f"dimension must be at least 1, got n={n}")
    if heterogeneity < 0.0:
        raise ValueError(f"heterogeneity must be non-negative, got {heterogeneity}")
    rows = n if samples is None else samples
    if rows < n:
        raise ValueError(f"need at least n={n} samples per device, got {rows}")
    shared_rng = np.random.default_rng([seed, 0])
    G0 = shared_rng.standard_normal((rows, n))
    w0 = shared_rng.standard_normal(n)
    tasks = []
    for i in range(m):
        rng = np.random.default_rng([seed, i + 1])
        Gi = rng.standard_normal((rows, n))
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        U, s, Vt = np.linalg.svd(G0 + heterogeneity * Gi, full_matrices=False)
        s = np.maximum(s / s.max(), 0.5)
        A = (U * s) @ Vt
        b = A @ (w0 + heterogeneity * u)
        tasks.append(QuadraticTask(A=A, b=b))
    return tasks


def label_partition(
    ds: LabeledDataset, m: int, labels_per_device: int, seed: int
) -> list[LabeledDataset]:
    """Label-skewed split: each device owns exactly ``labels_per_device`` labels.

    A seeded permutation of the label set is dealt in consecutive cyclic
    chunks, so every label has an owner whenever m * labels_per_device covers
    the label count.  Samples of a label are split evenly among its owners,
    remainder going to the lowest device id.
    """
    C = ds.classes
    if labels_per_device < 1:
        raise ValueError(f"labels_per_device must be at least 1, got {labels_per_device}")
    if labels_per_device > C:
        raise ValueError(f"cannot assign {labels_per_device} distinct labels out of {C}")
    if m * labels_per_device < C:
        raise ValueError(
            f"m * labels_per_device = {m * labels_per_device} cannot cover {C} labels"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(C)
    owned: list[set[int]] = []
    for d in range(m):
        owned.append({int(perm[(d * labels_per_device + j) % C]) for j in range(labels_per_device)})
    per_device_idx: list[list[np.ndarray]] = [[] for _ in range(m)]
    for label in range(C):
        owners = sorted(d for d in range(m) if label in owned[d])
        label_idx = np.flatnonzero(ds.y == label)
        for owner, chunk in zip(owners, np.array_split(label_idx, len(owners))):
            per_device_idx[owner].append(chunk)
    out = []
    for d in range(m):
        idx = np.sort(np.concatenate(per_device_idx[d])) if per_device_idx[d] else np.array([], dtype=int)
        out.append(LabeledDataset(X=ds.X[idx], y=ds.y[idx], classes=C))
    return out


def read_idx(path) -> np.ndarray:
    """Big-endian IDX reader for byte images (rank 3) and labels (rank 1).

    Images come back as float arrays scaled into [0, 1]; labels as integers.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"file has {len(raw)} bytes, need at least 4 for the magic", 0)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IMAGES_MAGIC:
        if len(raw) < 16:
            raise IdxFormatError(f"image header needs 16 bytes, file has {len(raw)}", 4)
        count, rows, cols = struct.unpack(">III", raw[4:16])
        expected = 16 + count * rows * cols
        if len(raw) != expected:
            raise IdxFormatError(
                f"expected {expected} bytes for {count} images of {rows}x{cols}, got {len(raw)}",
                16,
            )
        data = np.frombuffer(raw, dtype=np.uint8, offset=16)
        return data.reshape(count, rows, cols).astype(np.float64) / 255.0
    if magic == LABELS_MAGIC:
        if len(raw) < 8:
            raise IdxFormatError(f"label header needs 8 bytes, file has {len(raw)}", 4)
        (count,) = struct.unpack(">I", raw[4:8])
        expected = 8 + count
        if len(raw) != expected:
            raise IdxFormatError(
                f"expected {expected} bytes for {count} labels, got {len(raw)}", 8
            )
        return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    raise IdxFormatError(f"unrecognized magic 0x{magic:08x}", 0)


def load_idx_pair(images_path, labels_path, classes: int = 10) -> LabeledDataset:
    """Pair an IDX image file with its label file, flattening each image."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path} does not hold rank-3 image data", 0)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path} does not hold rank-1 label data", 0)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1)
    return LabeledDataset(X=X, y=labels, classes=classes)


def assign_bandwidths(m: int, b_M: float, sigma_N: float, seed: int) -> BandwidthProfile:
    """Uniform bandwidth draws on [(1 - sigma_N) b_M, (1 + sigma_N) b_M]."""
    if m < 1:
        raise ValueError(f"need at least one device, got m={m}")
    if b_M <= 0.0:
        raise ValueError(f"b_M must be positive, got {b_M}")
    if not (0.0 <= sigma_N < 1.0):
        raise ValueError(f"sigma_N must be in [0, 1), got {sigma_N}")
    rng = np.random.default_rng(seed)
    b = rng.uniform((1.0 - sigma_N) * b_M, (1.0 + sigma_N) * b_M, size=m)
    return BandwidthProfile(b=b, b_M=b_M, sigma_N=sigma_N)
