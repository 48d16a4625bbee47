"""Empirical CDF of training labels and pairwise adaptive margins.

The table stores the sorted training labels; a query value maps to the
fraction of training labels less than or equal to it. Margins between two
labels are twice the absolute difference of their ECDF values, so they
depend only on label ranks and live in [0, 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ECDFTable", "MarginMatrix", "fit_ecdf", "margin_matrix"]


@dataclass(frozen=True)
class ECDFTable:
    """Immutable ECDF over a fixed set of training labels."""

    sorted_labels: np.ndarray  # non-decreasing, float64
    n: int

    def transform(self, y) -> np.ndarray | float:
        """Fraction of training labels <= y. Scalar in, scalar out.

        Counts are exact integers divided by n, so equal labels always get
        bit-identical values. Queries below the training range give 0.0,
        above give 1.0.
        """
        arr = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("invalid label: non-finite query value")
        counts = np.searchsorted(self.sorted_labels, arr, side="right")
        out = counts / self.n
        if np.isscalar(y) or arr.ndim == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class MarginMatrix:
    """Pairwise adaptive margins for one batch of labels."""

    values: np.ndarray  # B x B, symmetric, zero diagonal, entries in [0, 2)
    batch_labels: np.ndarray


def fit_ecdf(labels) -> ECDFTable:
    """Build the ECDF table from training labels."""
    arr = np.asarray(labels, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("empty label set")
    if not np.all(np.isfinite(arr)):
        raise ValueError("invalid label: non-finite training label")
    return ECDFTable(sorted_labels=np.sort(arr), n=int(arr.size))


def margin_matrix(table: ECDFTable, batch_labels) -> MarginMatrix:
    """Pairwise margins 2*|phi(y_i) - phi(y_j)| over a batch of labels.

    Equal labels get exactly zero margin (positives carry no margin), and
    the matrix is symmetric with a zero diagonal by construction.
    """
    labels = np.asarray(batch_labels, dtype=np.float64).ravel()
    if labels.size == 0:
        raise ValueError("empty label set")
    if not np.all(np.isfinite(labels)):
        raise ValueError("invalid label: non-finite batch label")
    # differencing integer counts before dividing keeps the probability
    # identity 2 * #{y_j < y <= y_i} / n bit-exact
    counts = np.searchsorted(table.sorted_labels, labels, side="right")
    values = 2.0 * np.abs(counts[:, None] - counts[None, :]) / table.n
    return MarginMatrix(values=values, batch_labels=labels)
