"""Loss values against independently computed constants, plus properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanner.errors import SpannerError
from spanner.nn.autodiff import Tensor, backward
from spanner.nn.losses import (
    ClassDistribution,
    binary_cross_entropy,
    cross_entropy,
    kl_divergence,
)

# frozen from a separate double-precision evaluation of the formulas
LN2 = 0.6931471805599453
LN4 = 1.3862943611198906
CE_07 = 0.35667494393873245
BCE_09_025 = 1.753278948659991
KL_FIXTURE = 0.0851228259572216


def dist(*probs):
    return ClassDistribution(np.array(probs))


def test_class_distribution_invariants():
    with pytest.raises(SpannerError):
        ClassDistribution(np.array([0.5, 0.6]))
    with pytest.raises(SpannerError):
        ClassDistribution(np.array([-0.1, 1.1]))


def test_from_logits_normalizes():
    d = ClassDistribution.from_logits(Tensor(np.array([100.0, 100.0, 100.0])))
    np.testing.assert_allclose(d.probs, 1 / 3, rtol=1e-12)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
@settings(max_examples=200, deadline=None)
def test_from_logits_always_a_distribution(logits):
    d = ClassDistribution.from_logits(Tensor(np.array(logits)))
    assert (d.probs >= 0).all()
    assert abs(d.probs.sum() - 1.0) <= 1e-6


def test_cross_entropy_uniform():
    assert cross_entropy(dist(0.25, 0.25, 0.25, 0.25), 1) == pytest.approx(LN4, abs=1e-12)


def test_cross_entropy_one_hot_is_zero():
    assert cross_entropy(dist(0.0, 1.0, 0.0), 1) == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_fixture():
    assert cross_entropy(dist(0.7, 0.2, 0.1), 0) == pytest.approx(CE_07, abs=1e-12)


def test_cross_entropy_zero_probability_clamped():
    value = cross_entropy(dist(0.0, 1.0), 0)
    assert np.isfinite(value)


def test_cross_entropy_gold_out_of_range():
    with pytest.raises(SpannerError):
        cross_entropy(dist(0.5, 0.5), 2)


def test_cross_entropy_minimized_at_one_hot():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.dirichlet(np.ones(5))
        gold = int(rng.integers(5))
        one_hot = np.zeros(5)
        one_hot[gold] = 1.0
        assert cross_entropy(ClassDistribution(p), gold) >= cross_entropy(
            ClassDistribution(one_hot), gold
        ) - 1e-9


def test_cross_entropy_graph_matches_plain():
    logits = Tensor(np.array([0.4, -0.3, 1.2]))
    d = ClassDistribution.from_logits(logits)
    graph_value = float(cross_entropy(d, 2).data)
    plain_value = cross_entropy(ClassDistribution(d.probs), 2)
    assert graph_value == pytest.approx(plain_value, rel=1e-9)


def test_bce_half():
    assert binary_cross_entropy(0.5, 0.5) == pytest.approx(LN2, abs=1e-12)


def test_bce_limit_at_confident_correct():
    assert binary_cross_entropy(1 - 1e-9, 1.0) < 1e-8
    assert binary_cross_entropy(1e-9, 0.0) < 1e-8


def test_bce_fixture():
    assert binary_cross_entropy(0.9, 0.25) == pytest.approx(BCE_09_025, rel=1e-12)


def test_bce_never_infinite():
    for p in (0.0, 1.0):
        for t in (0.0, 0.5, 1.0):
            assert np.isfinite(binary_cross_entropy(p, t))


def test_bce_rejects_bad_target():
    with pytest.raises(SpannerError):
        binary_cross_entropy(0.5, 1.5)


def test_bce_graph_value_and_gradient():
    # logit z -> sigmoid(z) = p; d loss / dz = sigmoid(z) - t
    z = Tensor(np.array(0.7))
    t = 0.25
    loss = binary_cross_entropy(z, t)
    p = 1 / (1 + np.exp(-0.7))
    assert float(loss.data) == pytest.approx(-(t * np.log(p) + (1 - t) * np.log(1 - p)), rel=1e-9)
    grads = backward(loss.sum(), {"z": z})
    assert grads["z"] == pytest.approx(p - t, rel=1e-9)


def test_kl_identity_zero():
    d = dist(0.3, 0.3, 0.4)
    assert kl_divergence(d, d) == pytest.approx(0.0, abs=1e-9)


def test_kl_one_hot_vs_uniform():
    assert kl_divergence(dist(1.0, 0.0), dist(0.5, 0.5)) == pytest.approx(LN2, abs=1e-9)


def test_kl_fixture():
    assert kl_divergence(dist(0.7, 0.2, 0.1), dist(0.5, 0.3, 0.2)) == pytest.approx(
        KL_FIXTURE, rel=1e-12
    )


def test_kl_zero_pred_support_clamped():
    value = kl_divergence(dist(0.5, 0.5), dist(1.0, 0.0))
    assert np.isfinite(value)


def test_kl_gradient_flows_only_into_pred():
    logits = Tensor(np.array([0.2, -0.4, 0.9]))
    pred = ClassDistribution.from_logits(logits)
    target = dist(0.6, 0.3, 0.1)
    grads = backward(kl_divergence(target, pred), {"z": logits})
    # d KL / d z = softmax(z) - target
    np.testing.assert_allclose(grads["z"], pred.probs - target.probs, rtol=1e-6)


@given(st.integers(0, 4))
@settings(max_examples=20, deadline=None)
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        a = ClassDistribution(rng.dirichlet(np.ones(4)))
        b = ClassDistribution(rng.dirichlet(np.ones(4)))
        assert kl_divergence(a, b) >= -1e-9
