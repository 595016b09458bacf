import numpy as np
import pytest

from advparams import nn
from advparams.attacks import (AttackerGuess, AttackReport, adaptive_attack, fine_tune_attack, prune_attack,
                               prune_sweep)
from advparams.checkpoint import to_bytes
from advparams.data import synth_blobs


def _small():
    train, test = synth_blobs(classes=3, dim=6, per_class=30, seed=0)
    net = nn.train(nn.mlp([6, 8, 3], seed=0), train.inputs, train.labels, optimizer="adam",
                   lr=0.01, epochs=20, batch_size=16, seed=0)
    return net, train, test


def test_prune_example():
    net = nn.Network([nn.Dense(4, 1, weight=[[0.1], [-0.2], [0.3], [-0.4]])], (4,))
    out = prune_attack(net, 0.5)
    np.testing.assert_allclose(out.layers[0].weight[:, 0], [0, 0, 0.3, -0.4])
    assert net.layers[0].weight[0, 0] == np.float32(0.1)


def test_prune_rate_zero_unchanged():
    net = nn.mlp([5, 4, 3], seed=1)
    assert to_bytes(prune_attack(net, 0.0)) == to_bytes(net)
    with pytest.raises(ValueError):
        prune_attack(net, 1.0)


def test_prune_ties_lowest_index_first():
    net = nn.Network([nn.Dense(4, 1, weight=[[0.2], [-0.2], [0.2], [0.5]])], (4,))
    out = prune_attack(net, 0.5)
    np.testing.assert_allclose(out.layers[0].weight[:, 0], [0, 0, 0.2, 0.5])


def test_prune_sweep_report():
    net, _, test = _small()
    r = prune_sweep(net, test, (0.1, 0.5))
    assert r.kind == "prune" and r.checkpoints == [0.1, 0.5] and len(r.accuracies) == 2


def test_fine_tune_zero_epochs():
    net, train, test = _small()
    r = fine_tune_attack(net, train, test, epochs=0)
    assert r.checkpoints == [0]
    assert r.accuracies == [nn.evaluate_accuracy(net, test.inputs, test.labels)]


def test_fine_tune_checkpoints_every_n():
    net, train, test = _small()
    r = fine_tune_attack(net, train, test, epochs=25, every=10, lr=1e-3)
    assert r.checkpoints == [0, 10, 20, 25]
    assert "epoch\ttest_accuracy" in r.to_text()


def test_adaptive_attack_on_unencrypted_model():
    net, train, test = _small()
    out, r = adaptive_attack(net, train, AttackerGuess(max_iter_per_layer=3), test)
    assert r.kind == "adaptive" and r.checkpoints[-1] <= 6
    assert len(r.accuracies) == 2 and 0 <= r.final_accuracy <= 1
    assert to_bytes(net) != to_bytes(out)


def test_adaptive_attack_bad_layer():
    net, train, test = _small()
    with pytest.raises(ValueError):
        adaptive_attack(net, train, AttackerGuess(layer_ids=(1,)), test)


def test_report_validation():
    with pytest.raises(ValueError):
        AttackReport("x", [0, 1], [0.5])
    with pytest.raises(ValueError):
        AttackReport("x", [0], [1.5])
    with pytest.raises(ValueError):
        AttackReport("x", [1, 0], [0.5, 0.5])
