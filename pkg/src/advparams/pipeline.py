"""Run configuration and the train -> encrypt -> attack -> sweep workflow.

Every random choice is driven by ``RunConfig.seed``; nothing reads the
clock, so the same config always yields the same artifacts.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .attacks import AttackerGuess, AttackReport, adaptive_attack, fine_tune_attack, prune_sweep
from .data import Dataset, load_idx, sample_encryption_set, split_dataset, synth_blobs
from .encryption import EncryptionConfig, EncryptionOutcome, choose_layers, encrypt
from .keystore import SecretKey, make_key
from .metrics import EvalReport, stealth_report


@dataclass
class RunConfig:
    # dataset
    dataset: str = "blobs"
    classes: int = 10
    dim: int = 256
    per_class: int = 200
    spread: float = 0.5
    center_scale: float = 0.175
    offset: float = 3.0
    image_side: int = 0               # > 0 reshapes blobs to (1, side, side)
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    idx_limit: int = 0                # keep only the first N samples of each IDX split
    # model
    model: str = "mlp"
    hidden: str = "1024,64,64,64"
    cnn_channels: int = 8
    # training
    optimizer: str = "adam"
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.003
    epochs: int = 40
    batch_size: int = 128
    # encryption
    theta: float = 0.07
    alpha: float = 0.05
    t_loss: float = 12.0
    max_iter_per_layer: int = 18
    encryption_set_size: int = 300
    layer_count: int = 0              # 0 = every encryptable layer
    max_params: int = 0               # 0 = no cap
    # attacks
    attacker_fraction: float = 0.1
    finetune_epochs: int = 100
    finetune_every: int = 10
    finetune_optimizer: str = ""      # empty = training optimizer
    finetune_lr: float = 0.0          # 0 = training lr / 10
    prune_rates: str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    adaptive_theta: float = 0.0       # 0 = true theta
    adaptive_alpha: float = -1.0      # < 0 = true alpha
    # sweeps
    t_loss_values: str = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15"
    n_e_values: str = "1,2,4,6,8,10,12,16,20,24,32,48,64"
    layer_sweep_max_iter: int = 0     # 0 = I times the number of selected layers
    seed: int = 0
    out: str = "runs/default"

    @property
    def hidden_sizes(self) -> list[int]:
        return [int(h) for h in self.hidden.split(",") if h.strip()]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def load_config(path=None, **overrides) -> RunConfig:
    """Read a flat ``key = value`` file (no sections); unknown keys are an error."""
    cfg = RunConfig()
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + Path(path).read_text(), source=str(path))
        except configparser.Error as exc:
            raise ValueError(f"{path}: {exc}") from exc
        values.update(parser["run"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    changes = {}
    for key, raw in values.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        kind = type(getattr(cfg, key))
        try:
            changes[key] = raw if not isinstance(raw, str) or kind is str else kind(raw)
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from exc
    return cfg.replace(**changes)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "blobs":
        shape = (1, cfg.image_side, cfg.image_side) if cfg.image_side else None
        return synth_blobs(cfg.classes, cfg.dim, cfg.per_class, cfg.spread, seed=cfg.seed,
                           center_scale=cfg.center_scale, offset=cfg.offset, shape=shape)
    if cfg.dataset == "idx":
        train = load_idx(cfg.idx_train_images, cfg.idx_train_labels, "train", cfg.classes)
        test = load_idx(cfg.idx_test_images, cfg.idx_test_labels, "test", cfg.classes)
        if cfg.idx_limit:
            train = train.subset(np.arange(min(cfg.idx_limit, len(train))))
            test = test.subset(np.arange(min(cfg.idx_limit, len(test))))
        return train, test
    raise ValueError(f"unknown dataset {cfg.dataset!r}")


def build_model(cfg: RunConfig, input_shape) -> nn.Network:
    input_shape = tuple(input_shape)
    if cfg.model == "mlp":
        if len(input_shape) != 1:
            raise ValueError("mlp needs flat inputs; use model = cnn for images")
        return nn.mlp([input_shape[0], *cfg.hidden_sizes, cfg.classes], seed=cfg.seed)
    if cfg.model == "cnn":
        hidden = cfg.hidden_sizes[0] if cfg.hidden_sizes else 64
        return nn.small_cnn(input_shape, cfg.classes, cfg.cnn_channels, hidden, seed=cfg.seed)
    raise ValueError(f"unknown model {cfg.model!r}")


def train_model(cfg: RunConfig, train: Dataset) -> nn.Network:
    net = build_model(cfg, train.inputs.shape[1:])
    return nn.train(net, train.inputs, train.labels, optimizer=cfg.optimizer, lr=cfg.lr,
                    momentum=cfg.momentum, epochs=cfg.epochs, batch_size=cfg.batch_size,
                    weight_decay=cfg.weight_decay, seed=cfg.seed)


def encryption_config(cfg: RunConfig, net: nn.Network, **changes) -> EncryptionConfig:
    count = cfg.layer_count or None
    enc = EncryptionConfig(theta=cfg.theta, alpha=cfg.alpha, t_loss=cfg.t_loss,
                           max_iter_per_layer=cfg.max_iter_per_layer,
                           layer_ids=choose_layers(net, count, cfg.seed),
                           max_params=cfg.max_params or None, seed=cfg.seed)
    return dataclasses.replace(enc, **changes)


def encryption_set(cfg: RunConfig, train: Dataset):
    return sample_encryption_set(train, cfg.encryption_set_size, cfg.seed)


@dataclass
class EncryptionRun:
    outcome: EncryptionOutcome
    key: SecretKey
    report: EvalReport


def run_encryption(cfg: RunConfig, net: nn.Network, train: Dataset, test: Dataset,
                   enc_cfg: EncryptionConfig | None = None, acc_original: float | None = None) -> EncryptionRun:
    enc_set = encryption_set(cfg, train)
    enc_cfg = enc_cfg or encryption_config(cfg, net)
    outcome = encrypt(net, enc_set.inputs, enc_set.labels, enc_cfg)
    key = make_key(outcome)
    if acc_original is None:
        acc_original = nn.evaluate_accuracy(net, test.inputs, test.labels)
    report = EvalReport(
        acc_original=acc_original,
        acc_encrypted=nn.evaluate_accuracy(outcome.network, test.inputs, test.labels),
        n_encrypted=outcome.n_encrypted,
        n_all=net.n_params(),
        loss_before=outcome.initial_loss,
        loss_after=outcome.loss,
        reached_threshold=outcome.reached_threshold,
        stealth=stealth_report(net, outcome.network, outcome.records, enc_cfg.alpha),
        extra={"layers": list(enc_cfg.layer_ids),
               "iterations": {str(k): v for k, v in outcome.iterations.items()},
               "encryption_set_classes": enc_set.composition},
    )
    return EncryptionRun(outcome, key, report)


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


def attacker_split(cfg: RunConfig, test: Dataset) -> tuple[Dataset, Dataset]:
    """Attacker's share of the test set and the disjoint remainder used for scoring."""
    return split_dataset(test, cfg.attacker_fraction, cfg.seed)


def run_attack(kind: str, cfg: RunConfig, encrypted: nn.Network, test: Dataset) -> AttackReport:
    attacker, evaluation = attacker_split(cfg, test)
    if kind == "finetune":
        return fine_tune_attack(encrypted, attacker, evaluation, cfg.finetune_epochs,
                                optimizer=cfg.finetune_optimizer or cfg.optimizer,
                                lr=cfg.finetune_lr or cfg.lr / 10, momentum=cfg.momentum,
                                batch_size=cfg.batch_size, every=cfg.finetune_every, seed=cfg.seed)
    if kind == "prune":
        return prune_sweep(encrypted, evaluation, _floats(cfg.prune_rates))
    if kind == "adaptive":
        guess = AttackerGuess(theta=cfg.adaptive_theta or cfg.theta,
                              alpha=cfg.alpha if cfg.adaptive_alpha < 0 else cfg.adaptive_alpha,
                              max_iter_per_layer=cfg.max_iter_per_layer)
        return adaptive_attack(encrypted, attacker, guess, evaluation)[1]
    raise ValueError(f"unknown attack {kind!r}")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    axis: str
    values: list
    acc_encrypted: list
    n_encrypted: list
    acc_original: float
    classes: int

    def trend(self, tol: float = 0.03) -> dict:
        """Monotone-trend summary: largest rise between consecutive points, and the
        first axis value reaching twice the random-guess accuracy."""
        accs = self.acc_encrypted
        rises = [b - a for a, b in zip(accs, accs[1:])]
        floor = 2.0 / self.classes
        hits = [v for v, a in zip(self.values, accs) if a <= floor]
        return {
            "max_rise": max(rises) if rises else 0.0,
            "non_increasing_within_tol": all(r <= tol for r in rises),
            "first_at_most_2x_random": hits[0] if hits else None,
            "min_acc": min(accs),
        }

    def to_text(self) -> str:
        lines = [f"# sweep: {self.axis}", f"# A_o: {100 * self.acc_original:.2f}%",
                 f"{self.axis}\tA_e\tn_e"]
        lines += [f"{v}\t{100 * a:.2f}%\t{n}"
                  for v, a, n in zip(self.values, self.acc_encrypted, self.n_encrypted)]
        for k, v in self.trend().items():
            lines.append(f"# {k}: {v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["trend"] = self.trend()
        return json.dumps(d, indent=1, sort_keys=True) + "\n"


def sweep(axis: str, cfg: RunConfig, net: nn.Network, train: Dataset, test: Dataset,
          values=None) -> SweepResult:
    """One full encryption of ``net`` per axis value.

    ``t_loss`` varies the threshold, ``layer`` encrypts a single layer at a
    time, ``n_e`` caps the number of perturbations.
    """
    base = encryption_config(cfg, net)
    if axis == "t_loss":
        values = values or _floats(cfg.t_loss_values)
        configs = [dataclasses.replace(base, t_loss=v) for v in values]
    elif axis == "layer":
        values = values or list(net.encryptable_layers)
        # a lone layer gets the whole iteration budget of the multi-layer run
        budget = cfg.layer_sweep_max_iter or cfg.max_iter_per_layer * len(base.layer_ids)
        configs = [dataclasses.replace(base, layer_ids=(v,), max_iter_per_layer=budget)
                   for v in values]
    elif axis == "n_e":
        values = values or _ints(cfg.n_e_values)
        configs = [dataclasses.replace(base, max_params=v) for v in values]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    acc_o = nn.evaluate_accuracy(net, test.inputs, test.labels)
    enc_set = encryption_set(cfg, train)
    accs, counts = [], []
    for enc_cfg in configs:
        outcome = encrypt(net, enc_set.inputs, enc_set.labels, enc_cfg)
        accs.append(nn.evaluate_accuracy(outcome.network, test.inputs, test.labels))
        counts.append(outcome.n_encrypted)
    return SweepResult(axis, list(values), accs, counts, acc_o, net.class_count)
