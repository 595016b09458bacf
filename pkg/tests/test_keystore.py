import json

import numpy as np
import pytest

from advparams import nn
from advparams.checkpoint import digest, to_bytes
from advparams.encryption import EncryptionConfig, PerturbRecord, encrypt
from advparams.keystore import (DigestMismatch, KeyError_, SecretKey, apply_deltas, decrypt, dumps_key,
                                load_key, loads_key, make_key, save_key)
from helpers import desk_run


def _key_equal(a, b):
    return (a.model_digest == b.model_digest and a.version == b.version
            and [(e.layer, e.index, e.delta.hex()) for e in a.entries]
            == [(e.layer, e.index, e.delta.hex()) for e in b.entries])


def test_empty_key_round_trip(tmp_path):
    key = SecretKey("ab" * 32, [])
    save_key(key, tmp_path / "k.json")
    assert _key_equal(load_key(tmp_path / "k.json"), key)


def test_23_entry_key_round_trip(tmp_path):
    cfg, train, _, net, _ = desk_run(0)
    enc = encrypt(net, train.inputs[:300], train.labels[:300],
                  EncryptionConfig(t_loss=1e9, layer_ids=tuple(net.encryptable_layers)))
    assert len(enc.records) >= 23
    key = SecretKey(digest(enc.network), enc.records[:23])
    save_key(key, tmp_path / "k.json")
    back = load_key(tmp_path / "k.json")
    assert len(back) == 23 and _key_equal(back, key)


def test_delta_bits_are_exact():
    d = float(np.float32(0.1)) - float(np.float32(-0.30000001))
    key = SecretKey("0" * 64, [PerturbRecord(0, 3, d), PerturbRecord(0, 1, -5e-324)])
    back = loads_key(dumps_key(key))
    assert [e.delta for e in back.entries] == [d, -5e-324]


def test_any_corrupted_byte_fails_or_is_harmless():
    key = SecretKey("cd" * 32, [PerturbRecord(2, 7, 0.125), PerturbRecord(0, 1, -0.5)])
    raw = dumps_key(key).encode()
    for pos in range(len(raw)):
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        try:
            got = loads_key(bad.decode("utf-8", errors="replace"))
        except KeyError_:
            continue
        assert _key_equal(got, key), pos


def test_malformed_keys():
    good = json.loads(dumps_key(SecretKey("0" * 64, [PerturbRecord(0, 0, 1.0)])))
    with pytest.raises(KeyError_):
        loads_key("not json")
    with pytest.raises(KeyError_, match="version"):
        loads_key(json.dumps(good | {"version": 2}))
    with pytest.raises(KeyError_, match="checksum"):
        loads_key(json.dumps({k: v for k, v in good.items() if k != "checksum"}))
    with pytest.raises(KeyError_):
        SecretKey("0" * 64, [PerturbRecord(0, 0, 1.0), PerturbRecord(0, 0, 2.0)])


def test_decrypt_round_trip_and_wrong_model():
    _, train, test, net, run = desk_run(0)
    restored = decrypt(run.outcome.network, run.key)
    assert to_bytes(restored) == to_bytes(net)
    assert nn.evaluate_accuracy(restored, test.inputs, test.labels) == run.report.acc_original
    with pytest.raises(DigestMismatch):
        decrypt(net, run.key)


def test_empty_key_leaves_network_unchanged():
    net = nn.mlp([3, 3, 2], seed=1)
    assert to_bytes(decrypt(net, SecretKey(digest(net), []))) == to_bytes(net)


def test_apply_deltas_bounds():
    net = nn.mlp([3, 2])
    with pytest.raises(IndexError, match="layer 0"):
        apply_deltas(net, [PerturbRecord(0, 6, 1.0)])
    with pytest.raises(IndexError):
        apply_deltas(net, [PerturbRecord(1, 0, 1.0)])


def test_make_key_binds_encrypted_digest():
    rng = np.random.default_rng(0)
    net = nn.mlp([4, 6, 3], seed=0)
    x, y = rng.normal(size=(20, 4)), rng.integers(0, 3, size=20)
    out = encrypt(net, x, y, EncryptionConfig(t_loss=4.0, layer_ids=(0, 2)))
    key = make_key(out)
    assert key.model_digest == digest(out.network)
    assert to_bytes(decrypt(out.network, key)) == to_bytes(net)


def test_entry_order_does_not_matter():
    cfg, train, _, net, run = desk_run(1)
    entries = list(run.key.entries)
    rng = np.random.default_rng(5)
    for _ in range(3):
        shuffled = [entries[i] for i in rng.permutation(len(entries))]
        assert to_bytes(apply_deltas(run.outcome.network, shuffled)) == to_bytes(net)
