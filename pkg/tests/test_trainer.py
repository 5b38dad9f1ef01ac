import math

import numpy as np
import pytest

from conftest import tiny_dataset
from desgrada.graph import Graph, GraphDataset
from desgrada.trainer import (
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    encode_inputs,
    evaluate,
    forward_losses,
    train,
    train_source_only,
)


def small_cfg(**kw):
    base = dict(hidden_dim=8, layers=2, epochs=3, lr=1e-2, batch_size=2, pseudo_label_start_epoch=1)
    base.update(kw)
    return TrainConfig(**base)


def domains(seed=0):
    return tiny_dataset(seed, count=6), tiny_dataset(seed + 100, count=6, tag="target")


def test_zero_epochs():
    src, tgt = domains()
    model, hist = train(small_cfg(epochs=0), src, tgt)
    assert hist.epochs == [] and hist.steps == []
    assert model.feature_dim == 3


def test_single_graph_overfits():
    rng = np.random.default_rng(0)
    g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], (rng.random((5, 3)) < 0.5).astype(float), 1)
    ds = GraphDataset((g,), 2, 3)
    _, hist = train(small_cfg(hidden_dim=16, epochs=50, lr=1e-2).source_only(), ds)
    losses = [r["l_s"] for r in hist.epochs]
    assert losses[-1] < 0.1 * math.log(2)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_loss_composition_every_step():
    src, tgt = domains(1)
    _, hist = train(small_cfg(epochs=4), src, tgt)
    for s in hist.steps:
        assert abs(s["total"] - (s["l_s"] + s["l_t"] - 0.9 * s["l_ad"])) <= 1e-12
    assert any(s["l_t"] > 0 for s in hist.steps)


def test_source_only_is_config_switch():
    src, tgt = domains(2)
    cfg = small_cfg()
    m1 = train_source_only(cfg, src)
    m2, hist = train(cfg.source_only(), src, tgt)
    for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.value, p2.value)
    assert all(r["l_t"] == 0.0 for r in hist.epochs)
    assert "l_ad" not in hist.columns()


def test_training_is_deterministic(tmp_path):
    src, tgt = domains(3)
    runs = []
    for i in range(2):
        model, hist = train(small_cfg(), src, tgt)
        hist.to_csv(tmp_path / f"h{i}.csv")
        runs.append(model)
    for (_, a), (_, b) in zip(runs[0].named_parameters(), runs[1].named_parameters()):
        np.testing.assert_array_equal(a.value, b.value)
    assert (tmp_path / "h0.csv").read_bytes() == (tmp_path / "h1.csv").read_bytes()
    assert runs[0].table == runs[1].table


def test_evaluate_counts_per_class():
    src, _ = domains(4)
    model, _ = train(small_cfg(epochs=1).source_only(), src)
    res = evaluate(model, src)
    assert sum(t for _, t in res.per_class.values()) == len(src)
    assert res.accuracy == pytest.approx(sum(c for c, _ in res.per_class.values()) / len(src))
    # always predicting class 0 on a 70/30 split scores 0.7
    model.classifier.b2.value[:] = [1e6, -1e6]
    labels = [0] * 7 + [1] * 3
    ds = GraphDataset(tuple(Graph(2, [(0, 1)], np.ones((2, 3)), y, index=i) for i, y in enumerate(labels)), 2, 3)
    assert evaluate(model, ds).accuracy == pytest.approx(0.7)


def test_target_adaptation_touches_only_unseen_degrees():
    src, tgt = domains(5)
    cfg = small_cfg()
    model, _ = train(small_cfg(epochs=0), src, tgt)
    before = model.table.entries
    s_in = encode_inputs(src.graphs, cfg.lif.T, range(len(src)))
    t_in = encode_inputs(tgt.graphs, cfg.lif.T, range(len(tgt)))
    res = forward_losses(model, cfg, list(src.graphs), s_in, list(tgt.graphs), t_in,
                         tgt_pseudo=np.zeros(len(tgt), dtype=int))
    after = res.table.entries
    source_degrees = set(model.source_degrees.degrees)
    unseen = set(np.concatenate([g.degrees for g in tgt]).tolist()) - source_degrees
    assert set(before) == source_degrees and unseen
    for d in source_degrees:
        # source degrees only move through the source batch
        assert d in after
    assert set(after) - source_degrees == unseen


def test_divergence_keeps_last_finite_model():
    src, tgt = domains(6)
    cfg = small_cfg(epochs=2)

    def poison(epoch, model, row):
        model.classifier.w2.value[:] = np.nan

    with pytest.raises(TrainingDiverged) as info:
        train(cfg, src, tgt, callback=poison)
    assert isinstance(info.value, ArithmeticError)
    assert info.value.history.epochs


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(discriminator_input="other")
    with pytest.raises(ConfigError):
        TrainConfig.from_flat({"no_such_key": 1})
    cfg = TrainConfig.from_flat({"hidden_dim": 12, "T": 5, "leak": 0.3})
    assert cfg.lif.hidden_dim == 12 and cfg.lif.T == 5 and cfg.lif.leak == 0.3
    assert TrainConfig.from_flat(cfg.to_flat()) == cfg


def test_missing_target_means_source_only():
    src, _ = domains(7)
    _, hist = train(small_cfg(epochs=1), src, None)
    assert hist.source_only


def test_single_class_pseudo_label_rounds_are_skipped(monkeypatch):
    from desgrada import trainer
    from desgrada.adapt import PseudoLabelSet

    src, tgt = domains(8)
    monkeypatch.setattr(trainer, "pseudo_label_round",
                        lambda model, target, seed: PseudoLabelSet([(0, 1), (1, 1), (2, 1)]))
    _, hist = train(small_cfg(epochs=2), src, tgt)
    assert all(r["pseudo_labels"] == 0 for r in hist.epochs)
    _, hist = train(small_cfg(epochs=2, pseudo_label_min_classes=1), src, tgt)
    assert hist.epochs[-1]["pseudo_labels"] == 3
