"""Contrastive and regression losses with exact analytic input-gradients.

All contrastive losses consume already-normalized embeddings and return
gradients with respect to those embeddings as free variables; chaining
through the normalization Jacobian is the model's job. The margin-softmax
inner loop lives in a compiled extension when available, with a numpy
fallback selected at import.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adacon.ecdf import ECDFTable, MarginMatrix

try:
    from adacon import _ckernels as _kernels
except ImportError:
    from adacon import _kernels_py as _kernels

KERNEL_BACKEND = _kernels.BACKEND

NORM_TOL = 1e-6

__all__ = [
    "KERNEL_BACKEND",
    "EmbeddingBatch",
    "LossResult",
    "TemperatureConfig",
    "adacon_loss",
    "supcon_loss",
    "npair_loss",
    "adaptive_triplet_loss",
    "regression_loss",
    "finite_difference_check",
    "gradcheck_random",
]


@dataclass(frozen=True)
class TemperatureConfig:
    """Temperature scaling factor inside contrastive softmax terms."""

    s: float = 10.0

    def __post_init__(self):
        if not (self.s > 0):
            raise ValueError("temperature must be positive")


@dataclass
class EmbeddingBatch:
    """Unit-norm feature projections with labels and source-sample ids."""

    embeddings: np.ndarray  # B x d, rows on the unit hypersphere
    labels: np.ndarray  # B
    source_ids: np.ndarray  # B, marks which original sample a row came from

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        self.source_ids = np.asarray(self.source_ids).ravel()
        b = self.embeddings.shape[0]
        if self.labels.shape[0] != b or self.source_ids.shape[0] != b:
            raise ValueError("dimension mismatch: embeddings/labels/source_ids")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("non-finite embedding")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError("embedding not unit-norm")

    @classmethod
    def unchecked(cls, embeddings, labels, source_ids) -> "EmbeddingBatch":
        """Build without validation, for probing points slightly off the sphere."""
        batch = cls.__new__(cls)
        batch.embeddings = np.asarray(embeddings, dtype=np.float64)
        batch.labels = np.asarray(labels, dtype=np.float64).ravel()
        batch.source_ids = np.asarray(source_ids).ravel()
        return batch

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    def positives_mask(self) -> np.ndarray:
        """mask[i, j] = 1 iff j != i and labels match exactly."""
        eq = self.labels[:, None] == self.labels[None, :]
        np.fill_diagonal(eq, False)
        return eq.astype(np.float64)


@dataclass
class LossResult:
    """Scalar loss, per-anchor terms, and gradient w.r.t. the inputs.

    grad_embeddings is B x d for batch losses, 3 x T x d for the triplet
    loss (anchor/positive/negative blocks), and length B for regression
    losses (gradient w.r.t. predictions).
    """

    value: float
    per_anchor: np.ndarray
    grad_embeddings: np.ndarray
    skipped_anchors: int = 0
    diagnostics: dict = field(default_factory=dict)


def _contrastive(batch: EmbeddingBatch, margins: np.ndarray, pos_mask: np.ndarray,
                 s: float) -> LossResult:
    if batch.size < 2:
        raise ValueError("batch too small: need at least 2 rows")
    z = np.ascontiguousarray(batch.embeddings)
    cos = np.ascontiguousarray(z @ z.T)
    per_anchor, grad_cos, skipped = _kernels.contrastive_terms(
        cos, np.ascontiguousarray(margins), np.ascontiguousarray(pos_mask), s)
    # cos = z z^T with the diagonal unused, so d/dz = (G + G^T) z
    grad_z = (grad_cos + grad_cos.T) @ z
    return LossResult(value=float(per_anchor.sum()), per_anchor=per_anchor,
                      grad_embeddings=grad_z, skipped_anchors=skipped)


def adacon_loss(batch: EmbeddingBatch, margins: MarginMatrix,
                temp: TemperatureConfig = TemperatureConfig()) -> LossResult:
    """Adaptive-margin contrastive loss.

    Anchors pull their equal-label positives together while every other
    row is pushed away with an additive margin inside the denominator
    exponential; anchors without positives contribute zero.
    """
    if margins.values.shape != (batch.size, batch.size):
        raise ValueError("dimension mismatch: margin matrix vs batch")
    return _contrastive(batch, margins.values, batch.positives_mask(), temp.s)


def supcon_loss(batch: EmbeddingBatch,
                temp: TemperatureConfig = TemperatureConfig()) -> LossResult:
    """Supervised contrastive loss: equal labels form a class, no margins."""
    zeros = np.zeros((batch.size, batch.size))
    return _contrastive(batch, zeros, batch.positives_mask(), temp.s)


def npair_loss(batch: EmbeddingBatch) -> LossResult:
    """Multi-class N-pair loss: one designated positive per anchor, s = 1.

    The positive is the first other row sharing the anchor's source id,
    falling back to the first other row sharing its label; anchors with
    neither are skipped and counted.
    """
    if batch.size < 2:
        raise ValueError("batch too small: need at least 2 rows")
    b = batch.size
    pos_mask = np.zeros((b, b))
    for i in range(b):
        same_src = np.flatnonzero(
            (batch.source_ids == batch.source_ids[i])
            & (np.arange(b) != i))
        if same_src.size:
            pos_mask[i, same_src[0]] = 1.0
            continue
        same_label = np.flatnonzero(
            (batch.labels == batch.labels[i]) & (np.arange(b) != i))
        if same_label.size:
            pos_mask[i, same_label[0]] = 1.0
    return _contrastive(batch, np.zeros((b, b)), pos_mask, 1.0)


def adaptive_triplet_loss(anchors, positives, negatives, anchor_labels,
                          negative_labels, table: ECDFTable,
                          normalized: bool = True) -> LossResult:
    """Hinge triplet loss with rank-distance margins 2*|phi(y_i) - phi(y_n)|.

    value = sum_t max(0, ||z_i - z_p||^2 - ||z_i - z_n||^2 + margin_t).
    The subgradient at an inactive hinge is zero. grad_embeddings stacks
    the anchor/positive/negative gradients as a 3 x T x d array.
    """
    za = np.asarray(anchors, dtype=np.float64)
    zp = np.asarray(positives, dtype=np.float64)
    zn = np.asarray(negatives, dtype=np.float64)
    ya = np.asarray(anchor_labels, dtype=np.float64).ravel()
    yn = np.asarray(negative_labels, dtype=np.float64).ravel()
    if not (za.shape == zp.shape == zn.shape) or ya.shape != yn.shape \
            or za.shape[0] != ya.shape[0]:
        raise ValueError("dimension mismatch: triplet arrays")
    if normalized:
        for arr in (za, zp, zn):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOL):
                raise ValueError("embedding not unit-norm")

    phi_a = np.asarray(table.transform(ya), dtype=np.float64)
    phi_n = np.asarray(table.transform(yn), dtype=np.float64)
    margin = 2.0 * np.abs(phi_a - phi_n)

    dp = za - zp
    dn = za - zn
    hinge = np.sum(dp * dp, axis=1) - np.sum(dn * dn, axis=1) + margin
    active = (hinge > 0).astype(np.float64)
    per = np.maximum(hinge, 0.0)

    ga = active[:, None] * 2.0 * (zn - zp)
    gp = active[:, None] * (-2.0) * dp
    gn = active[:, None] * 2.0 * dn
    return LossResult(value=float(per.sum()), per_anchor=per,
                      grad_embeddings=np.stack([ga, gp, gn]))


def regression_loss(kind: str, predictions, targets,
                    delta: float = 0.05) -> LossResult:
    """Mean-reduced L1 / MSE / Huber loss with gradient w.r.t. predictions."""
    pred = np.asarray(predictions, dtype=np.float64).ravel()
    targ = np.asarray(targets, dtype=np.float64).ravel()
    if pred.shape != targ.shape:
        raise ValueError("dimension mismatch: predictions vs targets")
    if pred.size == 0:
        raise ValueError("empty batch")
    b = pred.size
    r = pred - targ
    if kind == "l1":
        per = np.abs(r) / b
        grad = np.sign(r) / b
    elif kind == "mse":
        per = r * r / b
        grad = 2.0 * r / b
    elif kind == "huber":
        if not (delta > 0):
            raise ValueError("huber delta must be positive")
        quad = np.abs(r) <= delta
        per = np.where(quad, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta)) / b
        grad = np.where(quad, r, delta * np.sign(r)) / b
    else:
        raise ValueError(f"unknown regression loss kind: {kind!r}")
    return LossResult(value=float(per.sum()), per_anchor=per,
                      grad_embeddings=grad)


def finite_difference_check(value_and_grad, x0, step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    value_and_grad maps a flat double array to (value, flat gradient).
    Error per coordinate is |analytic - numeric| / max(1e-12, |analytic| + |numeric|).

    Central differences of a function of magnitude |f| carry roundoff noise
    of order eps * |f| / (2 * step); coordinates whose analytic/numeric gap
    is below that provable noise level are unverifiable at this step size
    and count as exact. Any real gradient bug perturbs a coordinate by far
    more than the noise floor.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    f0, grad = value_and_grad(x0)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    noise_floor = 32.0 * np.finfo(np.float64).eps * (1.0 + abs(f0)) / (2.0 * step)
    worst = 0.0
    for k in range(x0.size):
        xp = x0.copy()
        xp[k] += step
        xm = x0.copy()
        xm[k] -= step
        fp, _ = value_and_grad(xp)
        fm, _ = value_and_grad(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("loss not differentiable here")
        numeric = (fp - fm) / (2.0 * step)
        if abs(grad[k] - numeric) <= noise_floor:
            continue
        err = abs(grad[k] - numeric) / max(1e-12, abs(grad[k]) + abs(numeric))
        worst = max(worst, err)
    return worst


def _random_batch(rng, b, d):
    z = rng.standard_normal((b, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = rng.choice(rng.uniform(-1.0, 1.0, size=max(2, b // 2)), size=b)
    return z, labels


def gradcheck_random(loss_kind: str, trials: int, seed: int,
                     step: float = 1e-6, max_b: int = 16,
                     max_d: int = 8) -> float:
    """Worst finite-difference error for a loss over random instances."""
    from adacon.ecdf import fit_ecdf, margin_matrix

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        b = int(rng.integers(3, max_b + 1))
        d = int(rng.integers(2, max_d + 1))
        z, labels = _random_batch(rng, b, d)
        ids = np.arange(b)
        table = fit_ecdf(rng.uniform(-1.0, 1.0, size=32))
        s = float(rng.uniform(0.5, 10.0))

        if loss_kind in ("adacon", "supcon", "npair"):
            def f(x, labels=labels, ids=ids, table=table, s=s,
                  b=b, d=d, kind=loss_kind):
                batch = EmbeddingBatch.unchecked(x.reshape(b, d), labels, ids)
                if kind == "adacon":
                    res = adacon_loss(batch, margin_matrix(table, labels),
                                      TemperatureConfig(s))
                elif kind == "supcon":
                    res = supcon_loss(batch, TemperatureConfig(s))
                else:
                    res = npair_loss(batch)
                return res.value, res.grad_embeddings.ravel()

            worst = max(worst, finite_difference_check(f, z.ravel(), step))
        elif loss_kind == "triplet":
            t = max(1, b // 3)
            za, ya = _random_batch(rng, t, d)
            zp, _ = _random_batch(rng, t, d)
            zn, yn = _random_batch(rng, t, d)

            def f(x, ya=ya, yn=yn, table=table, t=t, d=d):
                arrs = x.reshape(3, t, d)
                res = adaptive_triplet_loss(arrs[0], arrs[1], arrs[2], ya, yn,
                                            table, normalized=False)
                return res.value, res.grad_embeddings.ravel()

            # hinge kinks are non-differentiable; keep only clearly one-sided points
            margin = 2.0 * np.abs(np.asarray(table.transform(ya))
                                  - np.asarray(table.transform(yn)))
            hinge = (np.sum((za - zp) ** 2, axis=1)
                     - np.sum((za - zn) ** 2, axis=1) + margin)
            if np.any(np.abs(hinge) < 64 * step):
                continue
            x0 = np.stack([za, zp, zn]).ravel()
            worst = max(worst, finite_difference_check(f, x0, step))
        elif loss_kind in ("l1", "mse", "huber"):
            pred = rng.uniform(-1.0, 1.0, size=b)
            targ = rng.uniform(-1.0, 1.0, size=b)
            delta = float(rng.uniform(0.02, 0.5))
            # keep away from the |r| = delta kink and the |r| = 0 kink
            r = pred - targ
            bad = (np.abs(np.abs(r) - delta) < 64 * step) | (np.abs(r) < 64 * step)
            pred = np.where(bad, targ + delta + 0.1, pred)

            def f(x, targ=targ, kind=loss_kind, delta=delta):
                res = regression_loss(kind, x, targ, delta=delta)
                return res.value, res.grad_embeddings.ravel()

            worst = max(worst, finite_difference_check(f, pred, step))
        else:
            raise ValueError(f"unknown loss kind: {loss_kind!r}")
    return worst
