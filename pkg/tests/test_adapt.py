import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desgrada import autodiff as ad
from desgrada.adapt import (
    AttentionParams,
    ClassifierParams,
    DiscriminatorParams,
    adversarial_loss_from_probs,
    discriminator_probs,
    distill_pseudo_labels,
    kmeans,
    select_pseudo_labels,
    source_loss,
    target_loss,
    temporal_attention,
    total_loss,
)
from oracles import all_configurations, best_two_partition, pseudo_label_rule


def attention(d, rng):
    return AttentionParams.init(d, rng)


def test_attention_single_step():
    p = attention(3, np.random.default_rng(0))
    U = np.array([[0.5, -1.0, 2.0]])
    alpha, u = temporal_attention(U, p)
    np.testing.assert_allclose(alpha.value, [1.0])
    np.testing.assert_allclose(u.value, U[0] @ p.value_proj.value)


def test_attention_identical_rows_are_uniform():
    p = attention(4, np.random.default_rng(1))
    alpha, _ = temporal_attention(np.tile([0.1, 0.2, 0.3, 0.4], (5, 1)), p)
    np.testing.assert_allclose(alpha.value, np.full(5, 0.2))


def test_attention_dominant_step():
    d = 2
    p = AttentionParams(ad.param(np.array([10.0 * math.sqrt(d), 0.0])), ad.param(np.eye(d)), ad.param(np.eye(d)))
    U = np.array([[1.0, 0.0], [0.0, 1.0]])
    alpha, u = temporal_attention(U, p)
    assert alpha.value[0] == pytest.approx(1 / (1 + math.exp(-10)))
    np.testing.assert_allclose(u.value, U[0], atol=1e-3)


def test_source_loss_examples():
    assert float(source_loss(np.zeros((1, 2)), [0]).value) == pytest.approx(math.log(2))
    assert float(source_loss(np.array([[100.0, 0.0]]), [0]).value) == pytest.approx(0.0, abs=1e-12)
    assert float(source_loss(np.array([[1.0, 0.0]]), [1]).value) == pytest.approx(math.log(1 + math.e))


def test_target_loss_examples():
    assert float(target_loss(np.zeros((0, 3)), []).value) == 0.0
    assert float(target_loss(np.zeros((1, 3)), [2]).value) == pytest.approx(math.log(3))
    assert float(target_loss(np.array([[0.0, 200.0]]), [1]).value) == pytest.approx(0.0, abs=1e-12)


def test_adversarial_loss_examples():
    half = float(adversarial_loss_from_probs(np.full(3, 0.5), np.full(2, 0.5)).value)
    assert half == pytest.approx(2 * math.log(0.5))
    assert float(adversarial_loss_from_probs(np.array([0.8]), np.array([0.3])).value) == pytest.approx(
        math.log(0.8) + math.log(0.7))
    perfect = float(adversarial_loss_from_probs(np.array([1.0]), np.array([0.0])).value)
    assert -1e-5 < perfect < 0


def test_total_loss_examples():
    assert total_loss(1.0, 0.5, -1.0, 0.9) == pytest.approx(2.4)
    assert total_loss(1.0, 0.5, -3.0, 0.0) == 1.5
    assert total_loss(0.0, 0.0, 0.0, 0.9) == 0.0


@settings(max_examples=100, deadline=None)
@given(*[st.floats(-10, 10)] * 4)
def test_total_loss_is_linear(a, b, c, lam):
    base = total_loss(a, b, c, lam)
    assert total_loss(a + 1, b, c, lam) - base == pytest.approx(1.0, abs=1e-9)
    assert total_loss(a, b + 1, c, lam) - base == pytest.approx(1.0, abs=1e-9)
    assert total_loss(a, b, c + 1, lam) - base == pytest.approx(-lam, abs=1e-9)


def test_reversal_sits_after_the_classifier():
    rng = np.random.default_rng(0)
    feats = ad.param(rng.normal(size=(3, 4)))
    cls = ClassifierParams.init(4, 4, 2, rng, "classifier")
    disc = DiscriminatorParams.init(2, 4, 1, rng, "discriminator")
    params = [feats] + cls.parameters() + disc.parameters()

    def loss(lam):
        return lambda: ad.reduce_sum(ad.log(discriminator_probs(feats, cls, disc, lam)))

    _, plain = ad.value_and_grad(loss(-1.0), params)   # -1 turns the reversal into identity
    _, rev = ad.value_and_grad(loss(0.9), params)
    n_cls = len(cls.parameters())
    # encoder input and classifier both sit before the reversal
    for g0, g1 in zip(plain[:1 + n_cls], rev[:1 + n_cls]):
        np.testing.assert_allclose(g1, -0.9 * g0, atol=1e-14)
    # the discriminator itself is after it
    for g0, g1 in zip(plain[1 + n_cls:], rev[1 + n_cls:]):
        np.testing.assert_allclose(g1, g0, atol=1e-14)


def test_pseudo_labels_match_rule_on_every_small_configuration():
    for assign, preds, C in all_configurations(n_max=8, c_max=2):
        entries, _ = select_pseudo_labels(assign, preds, C)
        assert [i for i, _ in entries] == pseudo_label_rule(assign, preds, C)


def test_pseudo_label_examples():
    shallow = np.zeros((5, 3))
    pls = distill_pseudo_labels(shallow, np.zeros(5, dtype=int), 1, seed=0)
    assert pls.as_dict() == {i: 0 for i in range(5)}
    rng = np.random.default_rng(0)
    blobs = np.concatenate([rng.normal(0, 0.01, (4, 2)), rng.normal(5, 0.01, (4, 2))])
    preds = np.array([0] * 4 + [1] * 4)
    pls = distill_pseudo_labels(blobs, preds, 2, seed=1)
    assert pls.indices.tolist() == list(range(8))
    assert pls.indices.tolist() == pseudo_label_rule(pls.assignments, preds, 2)
    # a cluster split 50/50 has no dominating label
    entries, info = select_pseudo_labels(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
    assert [i for i, _ in entries] == [2, 3]
    assert info[0]["dominating_label"] is None


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_kmeans_finds_best_split_of_separated_data(n, seed):
    rng = np.random.default_rng(seed)
    left = rng.normal(0, 0.1, (n // 2, 2))
    right = rng.normal(4, 0.1, (n - n // 2, 2))
    X = np.concatenate([left, right])
    assign, centers = kmeans(X, 2, seed)
    inertia = ((X - centers[assign]) ** 2).sum()
    assert inertia == pytest.approx(best_two_partition(X)[0], rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(1, 3), st.integers(0, 10_000))
def test_distillation_invariants(n, C, seed):
    if n < C:
        return
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    preds = rng.integers(0, C, n)
    a = distill_pseudo_labels(X, preds, C, seed)
    b = distill_pseudo_labels(X, preds, C, seed)
    assert a.entries == b.entries
    for i, y in a.entries:
        assert 0 <= i < n and preds[i] == y


def test_pseudo_label_json_lists_clusters():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(0, 0.01, (3, 2)), rng.normal(5, 0.01, (3, 2))])
    pls = distill_pseudo_labels(X, np.array([0, 0, 0, 1, 1, 1]), 2, seed=0)
    doc = json.loads(pls.to_json())
    assert len(doc["entries"]) == 6
    assert {c["purity"] for c in doc["clusters"]} == {1.0}
