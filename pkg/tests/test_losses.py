import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacon import _kernels_py
from adacon.ecdf import fit_ecdf, margin_matrix
from adacon.losses import (
    EmbeddingBatch,
    TemperatureConfig,
    adacon_loss,
    adaptive_triplet_loss,
    finite_difference_check,
    gradcheck_random,
    npair_loss,
    regression_loss,
    supcon_loss,
)


def random_batch(rng, b, d, n_classes=3):
    z = rng.standard_normal((b, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = rng.choice(rng.uniform(0, 1, size=n_classes), size=b)
    return EmbeddingBatch(z, labels, np.arange(b))


# --- independent scalar re-evaluations, shared with no package code ---

def naive_adacon(z, labels, margins, s):
    b = len(z)
    total = 0.0
    per = []
    for i in range(b):
        pos = [j for j in range(b) if j != i and labels[j] == labels[i]]
        if not pos:
            per.append(0.0)
            continue
        term = 0.0
        for p in pos:
            denom = sum(math.exp(s * (np.dot(z[i], z[a]) + margins[i][a]))
                        for a in range(b) if a != i)
            term += -math.log(math.exp(s * np.dot(z[i], z[p])) / denom)
        per.append(term / len(pos))
        total += term / len(pos)
    return total, per


def naive_npair(z, positive_of):
    total = 0.0
    b = len(z)
    for i, p in positive_of.items():
        denom = sum(math.exp(np.dot(z[i], z[a])) for a in range(b) if a != i)
        total += -math.log(math.exp(np.dot(z[i], z[p])) / denom)
    return total


def naive_triplet(za, zp, zn, margins):
    total = 0.0
    for a, p, n, m in zip(za, zp, zn, margins):
        total += max(0.0, float(np.dot(a - p, a - p) - np.dot(a - n, a - n)) + m)
    return total


# --- adacon / supcon ---

def test_adacon_symmetric_three_sample():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    batch = EmbeddingBatch(z, [1.0, 1.0, 2.0], [0, 0, 1])
    table = fit_ecdf([1.0, 2.0])
    margins = margin_matrix(table, batch.labels)
    assert margins.values[0][2] == 1.0
    res = adacon_loss(batch, margins, TemperatureConfig(1.0))
    # cos(i,p)=1, cos(i,n)=0, d=1, s=1: numerator term equals competitor
    assert res.per_anchor[0] == pytest.approx(math.log(2), abs=1e-12)


def test_zero_margin_reduces_to_supcon():
    rng = np.random.default_rng(5)
    for _ in range(50):
        batch = random_batch(rng, 8, 4)
        zeros = margin_matrix(fit_ecdf([1.0]), np.ones(8))
        a = adacon_loss(batch, zeros, TemperatureConfig(3.0))
        s = supcon_loss(batch, TemperatureConfig(3.0))
        assert a.value == pytest.approx(s.value, rel=1e-12, abs=1e-12)
        assert np.allclose(a.grad_embeddings, s.grad_embeddings, atol=1e-12)


def test_adacon_matches_naive_oracle():
    rng = np.random.default_rng(42)
    batch = random_batch(rng, 6, 4)
    table = fit_ecdf(rng.uniform(0, 1, 20))
    margins = margin_matrix(table, batch.labels)
    res = adacon_loss(batch, margins, TemperatureConfig(2.5))
    expect_total, expect_per = naive_adacon(batch.embeddings, batch.labels,
                                            margins.values, 2.5)
    assert res.value == pytest.approx(expect_total, rel=1e-12)
    assert res.per_anchor == pytest.approx(expect_per, rel=1e-12)


def test_supcon_matches_naive_oracle():
    rng = np.random.default_rng(43)
    batch = random_batch(rng, 7, 3)
    res = supcon_loss(batch, TemperatureConfig(4.0))
    zeros = np.zeros((7, 7))
    expect_total, _ = naive_adacon(batch.embeddings, batch.labels, zeros, 4.0)
    assert res.value == pytest.approx(expect_total, rel=1e-12)


def test_supcon_anchor_positive_only_zero():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    batch = EmbeddingBatch(z, [1.0, 1.0], [0, 0])
    res = supcon_loss(batch, TemperatureConfig(5.0))
    assert res.value == 0.0
    assert np.allclose(res.grad_embeddings, 0.0)


@pytest.mark.parametrize("s", [0.3, 1.0, 10.0])
def test_supcon_symmetric_log2_any_temperature(s):
    z = np.array([[1.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0]])
    # cos(i,p) = cos(i,n) = 0 for anchor 0: perfectly symmetric softmax
    batch = EmbeddingBatch(z, [1.0, 1.0, 2.0], [0, 0, 1])
    res = supcon_loss(batch, TemperatureConfig(s))
    assert res.per_anchor[0] == pytest.approx(math.log(2), abs=1e-12)


def test_value_is_sum_of_per_anchor():
    rng = np.random.default_rng(8)
    batch = random_batch(rng, 10, 5)
    res = supcon_loss(batch, TemperatureConfig(7.0))
    assert res.value == pytest.approx(float(np.sum(res.per_anchor)), rel=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(17)
    for _ in range(20):
        # paired rows so the n-pair designated positive is order-independent
        d = 4
        z = rng.standard_normal((10, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        labels = np.repeat(rng.uniform(0, 1, 5), 2)
        ids = np.repeat(np.arange(5), 2)
        batch = EmbeddingBatch(z, labels, ids)
        perm = rng.permutation(10)
        permuted = EmbeddingBatch(batch.embeddings[perm], batch.labels[perm],
                                  batch.source_ids[perm])
        table = fit_ecdf(rng.uniform(0, 1, 15))
        temp = TemperatureConfig(6.0)
        for fn in (
            lambda b: adacon_loss(b, margin_matrix(table, b.labels), temp),
            lambda b: supcon_loss(b, temp),
            lambda b: npair_loss(b),
        ):
            assert fn(batch).value == pytest.approx(fn(permuted).value, abs=1e-10)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_softplus_identity_property(seed):
    # 1-pos/1-neg anchor term collapses to softplus of the margin violation
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((3, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    batch = EmbeddingBatch(z, [0.3, 0.3, 0.8], [0, 0, 1])
    table = fit_ecdf(rng.uniform(0, 1, 10))
    margins = margin_matrix(table, batch.labels)
    s = float(rng.uniform(0.2, 12.0))
    res = adacon_loss(batch, margins, TemperatureConfig(s))
    cip = float(z[0] @ z[1])
    cin = float(z[0] @ z[2])
    d = margins.values[0][2]
    expected = math.log1p(math.exp(s * (cin - cip + d)))
    assert res.per_anchor[0] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_monotone_triplet_consistency():
    # with one positive and one negative, the loss increases strictly in
    # cos(i,n) - cos(i,p) at fixed margin
    table = fit_ecdf([0.0, 1.0])
    s = 4.0
    values = []
    for gap in np.linspace(-0.8, 0.8, 9):
        theta_p = math.acos(0.1 - gap / 2)
        theta_n = math.acos(0.1 + gap / 2)
        z = np.array([[1.0, 0.0],
                      [math.cos(theta_p), math.sin(theta_p)],
                      [math.cos(theta_n), math.sin(theta_n)]])
        batch = EmbeddingBatch(z, [0.0, 0.0, 1.0], [0, 0, 1])
        res = adacon_loss(batch, margin_matrix(table, batch.labels),
                          TemperatureConfig(s))
        values.append(res.per_anchor[0])
    assert np.all(np.diff(values) > 0)


def test_decision_boundary_gradient_signs():
    # single-positive anchor: loss strictly decreases in cos(i, p) and
    # strictly increases in every cos(i, q); check d(loss)/d(cos) directly
    rng = np.random.default_rng(23)
    from adacon.losses import _kernels
    for _ in range(20):
        b = 6
        cos = rng.uniform(-1, 1, (b, b))
        cos = (cos + cos.T) / 2
        margins = rng.uniform(0, 2, (b, b))
        mask = np.zeros((b, b))
        mask[0, 1] = 1.0  # anchor 0 with single positive 1
        _, grad_cos, _ = _kernels.contrastive_terms(cos, margins, mask,
                                                    float(rng.uniform(0.5, 10)))
        assert grad_cos[0, 1] < 0
        assert np.all(grad_cos[0, 2:] > 0)


def test_dimension_mismatch_and_small_batch():
    rng = np.random.default_rng(1)
    batch = random_batch(rng, 4, 3)
    table = fit_ecdf([0.0, 1.0])
    wrong = margin_matrix(table, [0.0, 1.0])
    with pytest.raises(ValueError, match="dimension mismatch"):
        adacon_loss(batch, wrong, TemperatureConfig(1.0))
    single = EmbeddingBatch(np.array([[1.0, 0.0]]), [1.0], [0])
    with pytest.raises(ValueError, match="batch too small"):
        supcon_loss(single, TemperatureConfig(1.0))


def test_temperature_validation():
    with pytest.raises(ValueError):
        TemperatureConfig(0.0)


def test_empty_positive_anchors_counted():
    z = np.eye(3)
    batch = EmbeddingBatch(z, [1.0, 2.0, 3.0], [0, 1, 2])
    res = supcon_loss(batch, TemperatureConfig(1.0))
    assert res.value == 0.0
    assert res.skipped_anchors == 3


# --- n-pair ---

def test_npair_anchor_positive_only():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    batch = EmbeddingBatch(z, [1.0, 1.0], [0, 0])
    assert npair_loss(batch).value == 0.0


def test_npair_two_term_softmax():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    batch = EmbeddingBatch(z, [1.0, 1.0, 2.0], [0, 0, 1])
    res = npair_loss(batch)
    expected = -math.log(math.e / (math.e + 1.0))
    assert res.per_anchor[0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.313262, abs=1e-6)


def test_npair_matches_naive_oracle():
    rng = np.random.default_rng(77)
    z = rng.standard_normal((6, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    ids = np.array([0, 0, 1, 1, 2, 2])
    batch = EmbeddingBatch(z, rng.uniform(0, 1, 6), ids)
    positive_of = {0: 1, 1: 0, 2: 3, 3: 2, 4: 5, 5: 4}
    res = npair_loss(batch)
    assert res.value == pytest.approx(naive_npair(z, positive_of), rel=1e-12)


def test_npair_skips_lonely_anchor():
    z = np.eye(3)
    batch = EmbeddingBatch(z, [1.0, 1.0, 9.0], [0, 1, 2])
    res = npair_loss(batch)
    assert res.skipped_anchors == 1
    assert res.per_anchor[2] == 0.0


# --- adaptive triplet ---

def _triplet_geometry():
    za = np.array([[1.0, 0.0]])
    zp = np.array([[1.0, 0.0]])
    zn = np.array([[0.0, 1.0]])
    return za, zp, zn


def test_triplet_inactive_hinge():
    za, zp, zn = _triplet_geometry()
    # table where |phi(a) - phi(n)| = 0.75, margin 1.5 < separation 2
    table = fit_ecdf([0.5, 0.7, 0.7, 0.9])
    res = adaptive_triplet_loss(za, zp, zn, [0.5], [0.9], table)
    assert res.value == 0.0
    assert np.allclose(res.grad_embeddings, 0.0)


def test_triplet_active_hinge():
    za, zp, zn = _triplet_geometry()
    table = fit_ecdf([0.5, 0.9])  # margin 2 * |0.5 - 1.0| = 1.0: inactive
    assert adaptive_triplet_loss(za, zp, zn, [0.5], [0.9], table).value == 0.0
    # shrink the separation so the hinge activates: zn at 60 degrees
    zn2 = np.array([[0.5, math.sqrt(3) / 2]])
    res = adaptive_triplet_loss(za, zp, zn2, [0.5], [0.9], table)
    # ||a-n||^2 = 2 - 2cos = 1, value = 0 - 1 + 1.0 = 0 boundary; nudge margin
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_triplet_matches_naive_oracle():
    rng = np.random.default_rng(9)
    t, d = 5, 4
    mk = lambda: rng.standard_normal((t, d)) / 2
    za, zp, zn = mk(), mk(), mk()
    labels = rng.uniform(0, 1, 30)
    table = fit_ecdf(labels)
    ya = rng.choice(labels, t)
    yn = rng.choice(labels, t)
    res = adaptive_triplet_loss(za, zp, zn, ya, yn, table, normalized=False)
    phi = lambda y: np.asarray(table.transform(y))
    margins = 2.0 * np.abs(phi(ya) - phi(yn))
    assert res.value == pytest.approx(naive_triplet(za, zp, zn, margins), rel=1e-12)


def test_triplet_length_mismatch():
    za, zp, zn = _triplet_geometry()
    table = fit_ecdf([0.5])
    with pytest.raises(ValueError, match="dimension mismatch"):
        adaptive_triplet_loss(za, zp, np.vstack([zn, zn]), [0.5], [0.9], table)


# --- regression losses ---

def test_l1_example():
    res = regression_loss("l1", [1.0, 2.0], [1.0, 3.0])
    assert res.value == pytest.approx(0.5, abs=0)


def test_mse_example():
    assert regression_loss("mse", [1.0, 2.0], [1.0, 3.0]).value == pytest.approx(0.5)


def test_huber_linear_branch():
    res = regression_loss("huber", [0.2], [0.0], delta=0.05)
    assert res.value == pytest.approx(0.05 * (0.2 - 0.025), rel=1e-12)
    assert res.value == pytest.approx(0.00875, rel=1e-12)


def test_huber_quadratic_branch():
    res = regression_loss("huber", [0.03], [0.0], delta=0.05)
    assert res.value == pytest.approx(0.5 * 0.03 ** 2, rel=1e-12)


def test_regression_errors():
    with pytest.raises(ValueError, match="dimension mismatch"):
        regression_loss("l1", [1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="delta"):
        regression_loss("huber", [1.0], [1.0], delta=0.0)
    with pytest.raises(ValueError, match="unknown regression loss"):
        regression_loss("tukey", [1.0], [1.0])


# --- finite differences ---

@pytest.mark.parametrize("kind", ["adacon", "supcon", "npair", "triplet",
                                  "l1", "mse", "huber"])
def test_gradcheck_random(kind):
    assert gradcheck_random(kind, 30, seed=101) < 1e-5


def test_fd_check_flags_wrong_gradient():
    def bad(x):
        return float(x @ x), 2.0 * x * 1.01

    assert finite_difference_check(bad, np.linspace(-1, 1, 6)) > 1e-3


def test_fd_constant_loss():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    batch = EmbeddingBatch(z, [1.0, 1.0], [0, 0])

    def f(x):
        b = EmbeddingBatch.unchecked(x.reshape(2, 2), batch.labels, batch.source_ids)
        res = supcon_loss(b, TemperatureConfig(2.0))
        return res.value, res.grad_embeddings.ravel()

    # anchor+positive only: gradient identically zero
    _, g = f(z.ravel())
    assert np.allclose(g, 0.0)
    assert finite_difference_check(f, z.ravel()) < 1e-7


def test_triplet_inactive_hinge_zero_gradient_fd():
    za, zp, zn = _triplet_geometry()
    table = fit_ecdf([0.5, 0.7, 0.7, 0.9])

    def f(x):
        arrs = x.reshape(3, 1, 2)
        res = adaptive_triplet_loss(arrs[0], arrs[1], arrs[2], [0.5], [0.9],
                                    table, normalized=False)
        return res.value, res.grad_embeddings.ravel()

    assert finite_difference_check(f, np.stack([za, zp, zn]).ravel()) < 1e-7


# --- kernel backends ---

def test_python_and_active_backend_agree():
    rng = np.random.default_rng(31)
    for _ in range(25):
        b = int(rng.integers(2, 12))
        cos = rng.uniform(-1, 1, (b, b))
        cos = (cos + cos.T) / 2
        margins = rng.uniform(0, 2, (b, b))
        labels = rng.choice([0.1, 0.5, 0.9], size=b)
        mask = (labels[:, None] == labels[None, :]).astype(float)
        np.fill_diagonal(mask, 0.0)
        s = float(rng.uniform(0.5, 10))
        from adacon.losses import _kernels
        pa1, g1, k1 = _kernels.contrastive_terms(cos, margins, mask, s)
        pa2, g2, k2 = _kernels_py.contrastive_terms(cos, margins, mask, s)
        assert np.allclose(pa1, pa2, rtol=1e-13, atol=1e-13)
        assert np.allclose(g1, g2, rtol=1e-13, atol=1e-13)
        assert k1 == k2
