"""Pure-numpy contrastive kernel, used when the compiled extension is absent.

Same contract as adacon._ckernels.contrastive_terms; the two are compared
directly in the test suite and in benchmarks/bench_kernels.py.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def contrastive_terms(cos, margins, pos_mask, s):
    """Per-anchor margin-softmax losses and the gradient w.r.t. the cosine matrix.

    cos: B x B cosine similarities (only off-diagonal entries are used).
    margins: B x B additive margins inside the denominator exponentials.
    pos_mask: B x B, 1.0 where column j is a positive for anchor i.
    s: temperature scaling factor.

    Anchor i with npos positives contributes
        lse_i - (s / npos) * sum_p cos[i, p],
    where lse_i = log sum_{a != i} exp(s * (cos[i, a] + margins[i, a])).
    Anchors with no positive contribute zero and are counted as skipped.

    Returns (per_anchor, grad_cos, skipped).
    """
    cos = np.asarray(cos, dtype=np.float64)
    margins = np.asarray(margins, dtype=np.float64)
    pos_mask = np.asarray(pos_mask, dtype=np.float64)
    b = cos.shape[0]

    scaled = s * (cos + margins)
    np.fill_diagonal(scaled, -np.inf)
    shift = scaled.max(axis=1)
    w = np.exp(scaled - shift[:, None])
    denom = w.sum(axis=1)
    lse = shift + np.log(denom)
    w /= denom[:, None]

    npos = pos_mask.sum(axis=1)
    active = npos > 0
    safe_npos = np.maximum(npos, 1.0)

    pos_cos = (cos * pos_mask).sum(axis=1)
    per_anchor = np.where(active, lse - s * pos_cos / safe_npos, 0.0)
    grad_cos = s * w - (s / safe_npos)[:, None] * pos_mask
    grad_cos[~active] = 0.0
    return per_anchor, grad_cos, int(b - active.sum())
