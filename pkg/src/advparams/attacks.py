"""Key-free attacks on an encrypted network: fine-tuning, magnitude pruning
and the adaptive attack that replays the encryption steps in reverse.

None of these functions accept the secret key or the original network.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .encryption import (LayerExhausted, LayerSnapshot, clip, layer_gradient, perturbation,
                         select_weight)
from .nn import Network, evaluate_accuracy, train


@dataclass
class AttackReport:
    kind: str
    checkpoints: list            # epochs, pruning rates or iteration counts
    accuracies: list
    params: dict = field(default_factory=dict)
    label: str = "checkpoint"

    def __post_init__(self):
        if len(self.checkpoints) != len(self.accuracies):
            raise ValueError("checkpoints and accuracies differ in length")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        if list(self.checkpoints) != sorted(self.checkpoints):
            raise ValueError("checkpoints must be ordered")

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1]

    def to_text(self) -> str:
        lines = [f"# attack: {self.kind}"]
        lines += [f"# {k}: {v}" for k, v in sorted(self.params.items())]
        lines.append(f"{self.label}\ttest_accuracy")
        lines += [f"{c}\t{100 * a:.2f}%" for c, a in zip(self.checkpoints, self.accuracies)]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def fine_tune_attack(net: Network, attacker: Dataset, evaluation: Dataset, epochs: int = 100,
                     *, optimizer: str = "adam", lr: float = 3e-4, momentum: float = 0.9,
                     batch_size: int = 128, every: int = 10, seed: int = 0) -> AttackReport:
    """Retrain every parameter on the attacker's data, scoring ``evaluation`` every ``every`` epochs."""
    if len(attacker) == 0:
        raise ValueError("attacker dataset is empty")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    checkpoints = [0]
    accs = [evaluate_accuracy(net, evaluation.inputs, evaluation.labels)]

    def record(epoch, current):
        if epoch % every == 0 or epoch == epochs:
            checkpoints.append(epoch)
            accs.append(evaluate_accuracy(current, evaluation.inputs, evaluation.labels))

    if epochs:
        train(net, attacker.inputs, attacker.labels, optimizer=optimizer, lr=lr, momentum=momentum,
              epochs=epochs, batch_size=batch_size, seed=seed, callback=record)
    params = dict(epochs=epochs, optimizer=optimizer, lr=lr, batch_size=batch_size,
                  attacker_samples=len(attacker), seed=seed)
    return AttackReport("finetune", checkpoints, accs, params, label="epoch")


def prune_attack(net: Network, rate: float) -> Network:
    """Zero the ``floor(rate * n)`` smallest-magnitude weights of every weight layer.

    Ties in magnitude are pruned lowest flat index first.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("pruning rate must lie in [0, 1)")
    out = net.copy()
    for i in out.encryptable_layers:
        flat = out.layers[i].weight.reshape(-1)
        k = int(np.floor(rate * flat.size))
        if k == 0:
            continue
        order = np.argsort(np.abs(flat), kind="stable")
        flat[order[:k]] = 0.0
    return out


def prune_sweep(net: Network, evaluation: Dataset,
                rates=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)) -> AttackReport:
    accs = [evaluate_accuracy(prune_attack(net, r), evaluation.inputs, evaluation.labels)
            for r in rates]
    return AttackReport("prune", [float(r) for r in rates], accs, {"scope": "per-layer"},
                        label="rate")


@dataclass(frozen=True)
class AttackerGuess:
    """What the adaptive attacker assumes about the encryption."""

    theta: float = 0.07
    alpha: float = 0.05
    max_iter_per_layer: int = 18
    layer_ids: tuple | None = None      # None: try every weight layer


def adaptive_attack(net: Network, attacker: Dataset, guess: AttackerGuess,
                    evaluation: Dataset) -> tuple[Network, AttackReport]:
    """Replay the saliency selection on the encrypted model and subtract each step.

    The attacker can only measure ranges on the encrypted weights, so its
    clip band and step size are derived from those.
    """
    out = net.copy()
    layers = tuple(guess.layer_ids) if guess.layer_ids is not None else tuple(out.encryptable_layers)
    for l in layers:
        if l not in out.encryptable_layers:
            raise ValueError(f"layer {l} is not encryptable")
    before = evaluate_accuracy(out, evaluation.inputs, evaluation.labels)
    steps = 0
    for l in layers:
        flat = out.layers[l].weight.reshape(-1)
        snap = LayerSnapshot.capture(l, flat, guess.alpha)
        mask = np.ones(flat.size, dtype=bool)
        for _ in range(guess.max_iter_per_layer):
            grad = layer_gradient(out, attacker.inputs, attacker.labels, l)
            try:
                t = select_weight(grad, mask)
            except LayerExhausted:
                break
            if grad[t] == 0:
                break
            raw = float(flat[t]) - perturbation(guess.theta, float(grad[t]), snap)
            if not snap.lower <= raw <= snap.upper:
                mask[t] = False
            flat[t] = np.float32(clip(float(np.float32(raw)), snap))
            steps += 1
    after = evaluate_accuracy(out, evaluation.inputs, evaluation.labels)
    params = dict(theta=guess.theta, alpha=guess.alpha, max_iter_per_layer=guess.max_iter_per_layer,
                  layers=list(layers), attacker_samples=len(attacker))
    return out, AttackReport("adaptive", [0, steps], [before, after], params, label="iterations")
