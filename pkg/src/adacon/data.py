"""Synthetic regression datasets, CSV ingestion, augmentation, batching.

Samples are generated from a latent t ~ Uniform(0,1): the label is a
monotone map of t and the features are a fixed sinusoidal lift of t into D
dimensions plus Gaussian noise. Batch construction replicates each source
sample M times with independent augmentations so every row has at least
M - 1 equal-label positives.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "BatchPlan",
    "generate_dataset",
    "augment",
    "batch_iter",
    "load_csv",
    "save_csv",
    "split_dataset",
]

KINDS = ("ring", "poly", "skewed")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # N x D
    labels: np.ndarray  # N
    split: str = "train"
    metadata: dict = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.float64).ravel())
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("dimension mismatch: features vs labels")
        if self.features.shape[0] < 1:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise ValueError("non-finite dataset entry")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class BatchPlan:
    base_batch_size: int = 8
    augment_multiple: int = 8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.base_batch_size < 1 or self.augment_multiple < 1:
            raise ValueError("batch plan sizes must be >= 1")

    @property
    def effective_batch_size(self) -> int:
        return self.base_batch_size * self.augment_multiple


def _label_map(kind: str, t):
    if kind == "ring":
        return t
    if kind == "poly":
        # monotone cubic keeps label-rank structure while bunching mid-range
        return t + 4.0 * (t - 0.5) ** 3
    if kind == "skewed":
        # heavy right tail; exercises rank normalization of the margins
        return -np.log(1.0 - 0.99 * t)
    raise ValueError(f"unknown dataset kind: {kind!r}")


def _lift(t, dim):
    """Deterministic sinusoidal embedding of the latent into D dimensions."""
    cols = []
    for j in range(dim):
        freq = j // 2 + 1
        phase = 2.0 * np.pi * freq * t
        cols.append(np.cos(phase) if j % 2 == 0 else np.sin(phase))
    return np.stack(cols, axis=1)


def generate_dataset(kind: str, n: int, dim: int, noise: float, seed: int,
                     label_map=None, split: str = "train") -> Dataset:
    """Seeded synthetic dataset; label_map overrides the kind's default g(t)."""
    if n < 1 or dim < 2:
        raise ValueError("need n >= 1 and dim >= 2")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind: {kind!r}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, size=n)
    labels = label_map(t) if label_map is not None else _label_map(kind, t)
    features = _lift(t, dim)
    if noise > 0:
        features = features + rng.normal(0.0, noise, size=features.shape)
    meta = {"kind": kind, "n": n, "dim": dim, "noise": noise, "seed": seed}
    return Dataset(features=features, labels=np.asarray(labels, dtype=np.float64),
                   split=split, metadata=meta)


def augment(row, sigma: float, rng) -> np.ndarray:
    """Additive Gaussian feature perturbation; the label is untouched."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    row = np.asarray(row, dtype=np.float64)
    if sigma == 0:
        return row.copy()
    return row + rng.normal(0.0, sigma, size=row.shape)


def batch_iter(dataset: Dataset, plan: BatchPlan, sigma_aug: float, epoch_seed: int):
    """Yield (inputs, labels, source_ids) with batch augmentation.

    Each batch holds base_batch_size distinct sources, each replicated
    augment_multiple times with independent noise. Shuffling and noise are
    deterministic in (plan.shuffle_seed, epoch_seed). A final partial batch
    is emitted when it still has at least two sources.
    """
    if dataset.n < 2:
        raise ValueError("dataset too small: need at least 2 samples")
    rng = np.random.default_rng([plan.shuffle_seed, epoch_seed])
    order = rng.permutation(dataset.n)
    b0, m = plan.base_batch_size, plan.augment_multiple
    for start in range(0, dataset.n, b0):
        sources = order[start:start + b0]
        if sources.size < 2:
            break
        rows, labels, ids = [], [], []
        for src in sources:
            base = dataset.features[src]
            for _ in range(m):
                rows.append(augment(base, sigma_aug, rng))
                labels.append(dataset.labels[src])
                ids.append(src)
        yield np.stack(rows), np.asarray(labels), np.asarray(ids)


def split_dataset(dataset: Dataset, seed: int, fractions=(0.7, 0.15, 0.15)):
    """Shuffled train/val/test split by source index."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.n)
    n_train = int(round(fractions[0] * dataset.n))
    n_val = int(round(fractions[1] * dataset.n))
    parts = {}
    for name, idx in (("train", order[:n_train]),
                      ("val", order[n_train:n_train + n_val]),
                      ("test", order[n_train + n_val:])):
        parts[name] = Dataset(features=dataset.features[idx],
                              labels=dataset.labels[idx], split=name,
                              metadata=dataset.metadata)
    return parts["train"], parts["val"], parts["test"]


def save_csv(dataset: Dataset, path):
    """Header f0..f{D-1},label; UTF-8, comma separator, decimal point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
        for row, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])
    if dataset.metadata:
        with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
            for k, v in dataset.metadata.items():
                fh.write(f"{k}={v}\n")


def load_csv(path, split: str = "train") -> Dataset:
    """Strict parse of the CSV dataset format written by save_csv."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset file not found: {path}") from None
    with fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValueError("malformed header: last column must be 'label'")
        dim = len(header) - 1
        for j, name in enumerate(header[:-1]):
            if name != f"f{j}":
                raise ValueError(f"malformed header: expected f{j}, got {name!r}")
        feats, labels = [], []
        for i, row in enumerate(reader):
            if len(row) != dim + 1:
                raise ValueError(f"malformed row {i}: expected {dim + 1} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"malformed row {i}: non-numeric field") from None
            if not all(np.isfinite(vals)):
                raise ValueError(f"malformed row {i}: non-finite value")
            feats.append(vals[:-1])
            labels.append(vals[-1])
    if not feats:
        raise ValueError("empty dataset file")
    return Dataset(features=np.asarray(feats), labels=np.asarray(labels), split=split)
