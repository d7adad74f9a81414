"""Datasets: synthetic generators, IDX (MNIST) and CSV ingestion, splits."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

PROVENANCES = ("gaussian_toy", "sphere", "idx_file", "csv")


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str
    generator_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be an (n, d) matrix")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.inputs[idx], self.labels[idx], self.n_classes,
            self.provenance, dict(self.generator_params),
        )

    def head(self, k: Optional[int]) -> "LabeledDataset":
        if k is None or k >= self.n:
            return self
        return self.subset(np.arange(k))


@dataclass(frozen=True)
class MeasureSpec:
    """An input distribution with a nominal isoperimetry constant.

    ``gaussian_isotropic`` is N(0, sigma2 I_d); ``gaussian_mixture`` is the
    balanced two-component mixture with means +-separation*e1; ``sphere_uniform``
    is the uniform law on the unit sphere S^{d-1}.
    """

    kind: str
    d: int
    sigma2: float = 1.0
    separation: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian_isotropic", "sphere_uniform", "gaussian_mixture"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def nominal_c(self) -> float:
        if self.kind == "sphere_uniform":
            # coordinates of a unit-sphere point have variance 1/d
            return 1.0
        return self.sigma2 * self.d

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "sphere_uniform":
            return _sphere_points(self.d, n, rng)
        X = rng.standard_normal((n, self.d)) * self.sigma
        if self.kind == "gaussian_mixture":
            signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            X[:, 0] += signs * self.separation
        return X


def gen_gaussian_toy(
    d: int, n: int, sigma: float, delta: float = 1.0, seed: int = 0
) -> LabeledDataset:
    """Balanced binary task x | y ~ N(y * delta * e1, sigma^2 I_d), y in {-1, +1}.

    Labels are stored as {0, 1} (y = 2*label - 1).
    """
    if n % 2:
        raise ValueError("n must be even for a balanced dataset")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n // 2)
    labels = labels[rng.permutation(n)]
    X = sigma * rng.standard_normal((n, d))
    X[:, 0] += (2.0 * labels - 1.0) * delta
    return LabeledDataset(
        X, labels, 2, "gaussian_toy",
        {"d": d, "n": n, "sigma": sigma, "delta": delta, "seed": seed},
    )


def _sphere_points(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((n, d))
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    return Z / norms


def gen_sphere_uniform(d: int, n: int, seed: int = 0) -> np.ndarray:
    """n points uniform on the unit sphere in R^d, as an (n, d) array."""
    if d < 2:
        raise ValueError("sphere sampling needs d >= 2")
    return _sphere_points(d, n, np.random.default_rng(seed))


def _read_idx_header(buf: bytes, path, magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise ValueError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise ValueError(f"{path}: bad magic {found}, expected {magic}")
    return struct.unpack(">" + "I" * n_dims, buf[4:need]), need


def load_idx(images_path, labels_path, limit: Optional[int] = None) -> LabeledDataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1]."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    (count, rows, cols), off = _read_idx_header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), loff = _read_idx_header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    if count != n_labels:
        raise ValueError(f"image count {count} does not match label count {n_labels}")
    d = rows * cols
    if len(img) - off < count * d:
        raise ValueError(f"{images_path}: truncated pixel data")
    if len(lab) - loff < n_labels:
        raise ValueError(f"{labels_path}: truncated label data")
    k = count if limit is None else min(count, int(limit))
    pixels = np.frombuffer(img, dtype=np.uint8, count=k * d, offset=off).reshape(k, d)
    labels = np.frombuffer(lab, dtype=np.uint8, count=k, offset=loff).astype(np.int64)
    n_classes = int(labels.max()) + 1 if k else 1
    return LabeledDataset(
        pixels.astype(np.float64) / 255.0, labels, max(n_classes, 2), "idx_file",
        {"images": str(images_path), "labels": str(labels_path), "rows": rows, "cols": cols},
    )


def write_idx(images_path, labels_path, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images of shape (n, rows, cols) and labels of shape (n,)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    )


def load_csv(path, n_classes: Optional[int] = None) -> LabeledDataset:
    """Read a CSV with header ``x0,...,x{d-1},label``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        expected = [f"x{i}" for i in range(len(header) - 1)]
        if header[:-1] != expected:
            raise ValueError(f"{path}: feature columns must be x0..x{len(header) - 2}")
        rows = [r for r in reader if r]
    X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    X = X.reshape(len(rows), len(header) - 1)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    if n_classes is None:
        n_classes = max(int(y.max()) + 1 if y.size else 1, 2)
    return LabeledDataset(X, y, n_classes, "csv", {"path": str(path)})


def write_csv(path, dataset: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.d)] + ["label"])
        for x, y in zip(dataset.inputs, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def split(dataset: LabeledDataset, train_fraction: float, seed: int = 0):
    """Seeded shuffle into disjoint (train, test) parts."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(dataset.n)
    k = int(round(train_fraction * dataset.n))
    return dataset.subset(order[:k]), dataset.subset(order[k:])
