import json

import pytest

from advparams import cli, nn
from advparams.checkpoint import load_checkpoint, to_bytes
from advparams.pipeline import RunConfig, build_model, load_config, run_encryption
from helpers import desk_run

SMALL = """\
dim = 16
per_class = 40
hidden = 16   # one hidden layer
epochs = 8
encryption_set_size = 60
finetune_epochs = 4
finetune_every = 2
t_loss_values = 1,4
n_e_values = 1,2
t_loss = 6
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_load_config(small_cfg):
    cfg = load_config(small_cfg, seed=5)
    assert cfg.dim == 16 and cfg.hidden_sizes == [16] and cfg.seed == 5 and cfg.theta == 0.07


def test_unknown_key_is_an_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope = 1\n")
    with pytest.raises(ValueError):
        load_config(bad)
    assert run("train", "--config", bad, "--out", tmp_path / "o") == 1
    bad.write_text("epochs = 1\nepochs = 2\n")
    with pytest.raises(ValueError):
        load_config(bad)
    bad.write_text("epochs = many\n")
    with pytest.raises(ValueError, match="epochs"):
        load_config(bad)


def test_train_zero_epochs_is_init(tmp_path, small_cfg):
    assert run("train", "--config", small_cfg, "--out", tmp_path, "--seed", 3) == 0
    (tmp_path / "z.cfg").write_text(SMALL.replace("epochs = 8", "epochs = 0"))
    assert run("train", "--config", tmp_path / "z.cfg", "--out", tmp_path / "z", "--seed", 3) == 0
    init = build_model(load_config(tmp_path / "z.cfg", seed=3), (16,))
    assert (tmp_path / "z" / "model.ckpt").read_bytes() == to_bytes(init)
    assert (tmp_path / "model.ckpt").read_bytes() != to_bytes(init)


def test_full_flow(tmp_path, small_cfg):
    out = tmp_path / "o"
    assert run("train", "--config", small_cfg, "--out", out) == 0
    original = (out / "model.ckpt").read_bytes()
    assert run("encrypt", "--config", small_cfg, "--out", out) == 0
    assert (out / "model.ckpt").read_bytes() == original
    report = json.loads((out / "encrypt_report.json").read_text())
    assert report["reached_threshold"] and report["n_encrypted"] >= 1
    assert run("decrypt", "--config", small_cfg, "--out", out) == 0
    assert (out / "restored.ckpt").read_bytes() == original
    assert run("report", "--config", small_cfg, "--out", out) == 0
    assert "restored_matches  true" in (out / "report.txt").read_text()
    for kind in ("prune", "finetune", "adaptive"):
        assert run("attack", kind, "--config", small_cfg, "--out", out) == 0
        assert (out / f"attack_{kind}.json").exists()
    for axis in ("t-loss", "layer", "n-e"):
        assert run("sweep", axis, "--config", small_cfg, "--out", out) == 0
    assert "first_at_most_2x_random" in (out / "sweep_t_loss.txt").read_text()


def test_wrong_key_exits_3(tmp_path, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, seed in ((a, 1), (b, 2)):
        assert run("train", "--config", small_cfg, "--out", d, "--seed", seed) == 0
        assert run("encrypt", "--config", small_cfg, "--out", d, "--seed", seed) == 0
    assert run("decrypt", "--out", a, "--key", b / "key.json") == 3
    (a / "key.json").write_text((a / "key.json").read_text().replace('"index": ', '"index": 1'))
    assert run("decrypt", "--out", a) == 3


def test_threshold_not_reached_exits_2(tmp_path, small_cfg):
    assert run("train", "--config", small_cfg, "--out", tmp_path) == 0
    (tmp_path / "hard.cfg").write_text(SMALL.replace("t_loss = 6", "t_loss = 1000\nmax_iter_per_layer = 1"))
    assert run("encrypt", "--config", tmp_path / "hard.cfg", "--out", tmp_path) == 2
    assert not json.loads((tmp_path / "encrypt_report.json").read_text())["reached_threshold"]


def test_never_overwrites_original(tmp_path, small_cfg):
    assert run("train", "--config", small_cfg, "--out", tmp_path) == 0
    (tmp_path / "model.ckpt").rename(tmp_path / "encrypted.ckpt")
    before = (tmp_path / "encrypted.ckpt").read_bytes()
    assert run("encrypt", "--config", small_cfg, "--out", tmp_path, "--checkpoint", tmp_path / "encrypted.ckpt") == 1
    assert (tmp_path / "encrypted.ckpt").read_bytes() == before


def test_missing_checkpoint(tmp_path):
    assert run("encrypt", "--out", tmp_path) == 1


def test_lower_threshold_leaves_more_accuracy():
    cfg, train, test, net, run12 = desk_run(0)
    run1 = run_encryption(cfg.replace(t_loss=1.0), net, train, test)
    assert run1.report.acc_encrypted > run12.report.acc_encrypted


def test_default_desk_config():
    _, _, _, _, r = desk_run(0)
    assert r.report.acc_original >= 0.9 and r.report.acc_drop >= 0.75
