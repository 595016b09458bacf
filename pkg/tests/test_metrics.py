import numpy as np
import pytest

from advparams import nn
from advparams.encryption import PerturbRecord
from advparams.metrics import EvalReport, accuracy_drop, changed_weights, stealth_report, weight_stats
from helpers import desk_run


def test_accuracy_drop_examples():
    assert accuracy_drop(0.9101, 0.1036) == pytest.approx(0.8065)
    assert accuracy_drop(0.9485, 0.0694) == pytest.approx(0.8791)
    assert accuracy_drop(0.5, 0.5) == 0
    with pytest.raises(ValueError):
        accuracy_drop(1.2, 0.1)


def test_weight_stats_simple():
    net = nn.Network([nn.Dense(2, 1, weight=[[-1.0], [1.0]])], (2,))
    s = weight_stats(net)
    assert s.mean == 0 and s.per_layer[0] == (-1.0, 1.0)
    net.layers[0].weight[:] = 0.25
    assert weight_stats(net).std == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_weight_stats_two_pass_oracle(seed):
    rng = np.random.default_rng(seed)
    net = nn.mlp([int(rng.integers(2, 30)), int(rng.integers(2, 30)), 3], seed=seed)
    for i in net.encryptable_layers:
        net.layers[i].weight += np.float32(rng.normal(0.3, 0.1))
    w = np.concatenate([net.layers[i].weight.ravel() for i in net.encryptable_layers]).astype(np.longdouble)
    mu = w.sum() / w.size
    sigma = np.sqrt(((w - mu) ** 2).sum() / w.size)
    s = weight_stats(net)
    assert s.mean == pytest.approx(float(mu), rel=1e-6)
    assert s.std == pytest.approx(float(sigma), rel=1e-6)


def test_identical_nets_zero_deltas():
    net = nn.mlp([4, 3, 2], seed=0)
    r = stealth_report(net, net.copy(), [], 0.05)
    assert r.delta_mean == 0 and r.delta_std == 0 and r.in_range


def test_out_of_range_weight_is_flagged():
    net = nn.mlp([4, 3, 2], seed=0)
    bad = net.copy()
    w = bad.layers[0].weight.reshape(-1)
    w[5] = net.layers[0].weight.max()       # inside [min, max] but outside the clip band
    r = stealth_report(net, bad, [PerturbRecord(0, 5, 0.0)], 0.05)
    assert not r.in_range and r.violations[0][:2] == (0, 5)


def test_changed_weights():
    net = nn.mlp([3, 2], seed=0)
    other = net.copy()
    other.layers[0].weight[1, 1] = 7.0
    assert changed_weights(net, other) == [(0, 3)]


def test_desk_run_stealth():
    _, _, _, net, run = desk_run(0)
    s = run.report.stealth
    span = max(b[1] - b[0] for b in s.bands.values())
    assert s.in_range
    assert s.delta_mean <= 1e-3 * span
    assert s.delta_std / s.std_before <= 1e-3


def test_eval_report_rows():
    r = EvalReport(0.9, 0.1, 5, 1000)
    rows = dict(r.rows())
    assert rows["A_d"] == "80.00%" and rows["proportion"] == "0.500000%"
    assert r.to_dict()["acc_drop"] == pytest.approx(0.8)
