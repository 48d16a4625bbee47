"""Regression metrics and feature-space diagnostics.

The diagnostics quantify whether feature similarity tracks label rank
distance: a scatter of pairwise cosine similarity against ECDF label
distance with its Spearman correlation, and a 1-D angular layout anchored
at the least-similar pair of embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adacon.ecdf import ECDFTable
from adacon.losses import EmbeddingBatch

__all__ = ["MetricsReport", "ScatterDiagnostic", "regression_metrics",
           "pairwise_scatter", "angular_layout", "spearman_rho"]


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    r2: float | None  # None when target variance is zero
    n: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse,
                "r2": "undefined" if self.r2 is None else self.r2, "n": self.n}


@dataclass(frozen=True)
class ScatterDiagnostic:
    distances: np.ndarray  # ECDF label distances in [0, 1)
    similarities: np.ndarray  # cosine similarities in [-1, 1]
    spearman_rho: float | None  # None when either coordinate is constant
    n_pairs: int


def regression_metrics(predictions, targets) -> MetricsReport:
    pred = np.asarray(predictions, dtype=np.float64).ravel()
    targ = np.asarray(targets, dtype=np.float64).ravel()
    if pred.shape != targ.shape or pred.size == 0:
        raise ValueError("dimension mismatch: predictions vs targets")
    r = pred - targ
    mae = float(np.mean(np.abs(r)))
    rmse = float(np.sqrt(np.mean(r * r)))
    ss_tot = float(np.sum((targ - targ.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = None
    else:
        r2 = 1.0 - float(np.sum(r * r)) / ss_tot
    return MetricsReport(mae=mae, rmse=rmse, r2=r2, n=pred.size)


def _average_ranks(x) -> np.ndarray:
    """Ranks starting at 1; ties share the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> float | None:
    """Rank correlation with average ranks for ties; None if degenerate."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa = ra - ra.mean()
    sb = rb - rb.mean()
    denom = np.sqrt(np.sum(sa * sa) * np.sum(sb * sb))
    if denom == 0.0:
        return None
    return float(np.sum(sa * sb) / denom)


def pairwise_scatter(batch: EmbeddingBatch, table: ECDFTable, n_pairs: int = 2000,
                     seed: int = 0) -> ScatterDiagnostic:
    """Sample distinct index pairs; returns (ECDF distance, cosine) points.

    Pairs are drawn uniformly without replacement; if the batch has fewer
    distinct pairs than requested, all pairs are used.
    """
    b = batch.size
    if b < 2:
        raise ValueError("batch too small: need at least 2 rows")
    total = b * (b - 1) // 2
    rng = np.random.default_rng(seed)
    if n_pairs >= total:
        chosen = np.arange(total)
    else:
        chosen = rng.choice(total, size=n_pairs, replace=False)
    iu, ju = np.triu_indices(b, k=1)
    ii, jj = iu[chosen], ju[chosen]

    phi = np.asarray(table.transform(batch.labels))
    distances = np.abs(phi[ii] - phi[jj])
    sims = np.sum(batch.embeddings[ii] * batch.embeddings[jj], axis=1)
    rho = spearman_rho(distances, sims)
    return ScatterDiagnostic(distances=distances, similarities=sims,
                             spearman_rho=rho, n_pairs=distances.size)


def angular_layout(batch: EmbeddingBatch):
    """Place embeddings on [0, pi] by angle to the least-similar pair's first end.

    The pair with minimum cosine similarity defines the endpoints; every
    row is placed at arccos of its clamped similarity to the first
    endpoint. Output is a list of (angle, label) sorted by angle.
    """
    b = batch.size
    if b < 2:
        raise ValueError("batch too small: need at least 2 rows")
    z = batch.embeddings
    cos = z @ z.T
    iu, ju = np.triu_indices(b, k=1)
    k = np.argmin(cos[iu, ju])
    e1 = iu[k]
    angles = np.arccos(np.clip(cos[:, e1], -1.0, 1.0))
    order = np.argsort(angles, kind="stable")
    return [(float(angles[i]), float(batch.labels[i])) for i in order]


def export_scatter_csv(diag: ScatterDiagnostic, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ecdf_distance,cosine_similarity\n")
        for d, s in zip(diag.distances, diag.similarities):
            fh.write(f"{float(d)!r},{float(s)!r}\n")


def export_layout_csv(layout, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("angle,label\n")
        for a, y in layout:
            fh.write(f"{a!r},{y!r}\n")
