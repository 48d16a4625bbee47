"""Adaptive-margin contrastive learning for regression tasks.

Feature embeddings are pulled together for equal labels and pushed apart
by a margin proportional to the rank distance of their labels under the
empirical CDF of the training labels.
"""

from adacon.ecdf import ECDFTable, MarginMatrix, fit_ecdf, margin_matrix

__all__ = ["ECDFTable", "MarginMatrix", "fit_ecdf", "margin_matrix"]
