"""Gradient-guided weight perturbation that disables a trained network.

Per encrypted layer, each iteration picks the unmasked weight with the
largest absolute loss gradient, pushes it by ``theta * sign(g) * range``
and clips the result into ``[T1, T2]``, the layer range shrunk by ``alpha``
on both sides. Encryption stops as soon as the loss on the encryption set
exceeds ``t_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Network, loss, param_gradients


class LayerExhausted(Exception):
    """No unmasked weight with a usable gradient remains in the layer."""


@dataclass(frozen=True)
class EncryptionConfig:
    theta: float = 0.07
    alpha: float = 0.05
    t_loss: float = 12.0
    max_iter_per_layer: int = 18
    layer_ids: tuple = ()
    max_params: int | None = None
    seed: int = 0

    def validate(self, net: Network | None = None) -> None:
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0 <= self.alpha < 0.5:
            raise ValueError("alpha must lie in [0, 0.5)")
        if not self.t_loss > 0:
            raise ValueError("t_loss must be positive")
        if self.max_iter_per_layer < 1:
            raise ValueError("max_iter_per_layer must be >= 1")
        if self.max_params is not None and self.max_params < 1:
            raise ValueError("max_params must be >= 1 when set")
        if not self.layer_ids:
            raise ValueError("layer_ids must name at least one encryptable layer")
        if len(set(self.layer_ids)) != len(self.layer_ids):
            raise ValueError("layer_ids contains duplicates")
        if net is not None:
            eligible = set(net.encryptable_layers)
            bad = [i for i in self.layer_ids if i not in eligible]
            if bad:
                raise ValueError(f"layers {bad} are not encryptable (eligible: {sorted(eligible)})")


@dataclass(frozen=True)
class LayerSnapshot:
    """Layer range and clip band frozen before the layer's first perturbation.

    ``lower``/``upper`` are float32 values rounded inward so that every
    clipped float32 weight provably lies inside the real-valued band.
    """

    layer: int
    w_min: float
    w_max: float
    lower: float
    upper: float

    @property
    def span(self) -> float:
        return self.w_max - self.w_min

    @classmethod
    def capture(cls, layer: int, weights: np.ndarray, alpha: float) -> "LayerSnapshot":
        w_min = float(np.min(weights))
        w_max = float(np.max(weights))
        span = w_max - w_min
        lo = np.float32(w_min + alpha * span)
        hi = np.float32(w_max - alpha * span)
        if float(lo) < w_min + alpha * span:
            lo = np.nextafter(lo, np.float32(np.inf))
        if float(hi) > w_max - alpha * span:
            hi = np.nextafter(hi, np.float32(-np.inf))
        if lo > hi:
            # band narrower than one float32 step; collapse onto the midpoint
            lo = hi = np.float32(w_min + 0.5 * span)
        return cls(layer, w_min, w_max, float(lo), float(hi))


@dataclass(frozen=True)
class PerturbRecord:
    """Applied change at one weight: ``encrypted - original``, exact in float64."""

    layer: int
    index: int
    delta: float


@dataclass
class EncryptionOutcome:
    network: Network
    records: list
    loss: float
    reached_threshold: bool
    iterations: dict = field(default_factory=dict)
    initial_loss: float = 0.0
    snapshots: dict = field(default_factory=dict)

    @property
    def n_encrypted(self) -> int:
        return len(self.records)


def layer_gradient(net: Network, inputs, labels, layer_id: int) -> np.ndarray:
    """Flat float32 gradient of the mean loss w.r.t. one layer's weights."""
    if layer_id not in net.encryptable_layers:
        raise ValueError(f"layer {layer_id} is not encryptable")
    return param_gradients(net, inputs, labels, layers=[layer_id]).weights[layer_id].ravel()


def select_weight(grad, mask) -> int:
    """Index of the largest ``|grad|`` among unmasked entries; ties go to the lowest index."""
    grad = np.asarray(grad)
    mask = np.asarray(mask, dtype=bool)
    if grad.shape != mask.shape:
        raise ValueError("gradient and mask must have the same length")
    if not mask.any():
        raise LayerExhausted("every weight in the layer is masked")
    score = np.where(mask, np.abs(grad.astype(np.float64)), -1.0)
    return int(np.argmax(score))


def perturbation(theta: float, grad_component: float, snapshot: LayerSnapshot) -> float:
    return float(theta * np.sign(grad_component) * snapshot.span)


def clip(w: float, snapshot: LayerSnapshot) -> float:
    return float(min(max(w, snapshot.lower), snapshot.upper))


def _exact_delta(new: np.float32, old: np.float32) -> float | None:
    # float64 difference of two float32 values; None when it would round
    d = float(new) - float(old)
    if float(old) + d != float(new) or float(new) - d != float(old):
        return None
    return d


def _perturb_once(w: np.ndarray, original: np.ndarray, grad: np.ndarray, mask: np.ndarray,
                  snap: LayerSnapshot, theta: float) -> int:
    """Apply one perturbation in place and return its index, masking unusable picks."""
    while True:
        t = select_weight(grad, mask)
        g = float(grad[t])
        if g == 0.0:
            # every remaining candidate has zero gradient: nothing left to push
            mask[grad == 0] = False
            raise LayerExhausted("remaining weights have zero gradient")
        raw = float(w[t]) + perturbation(theta, g, snap)
        if not snap.lower <= raw <= snap.upper:
            mask[t] = False
        new = np.float32(clip(float(np.float32(raw)), snap))
        if new == w[t] or _exact_delta(new, original[t]) is None:
            mask[t] = False
            continue
        w[t] = new
        return t


def encrypt(net: Network, inputs, labels, cfg: EncryptionConfig) -> EncryptionOutcome:
    """Perturb a handful of weights of ``net`` until the loss exceeds ``cfg.t_loss``.

    The input network is left untouched. Records hold one entry per changed
    weight, in order of first perturbation.
    """
    if not net.encryptable_layers:
        raise ValueError("network has no encryptable layers")
    if len(labels) == 0:
        raise ValueError("encryption set is empty")
    cfg.validate(net)
    out = net.copy()
    originals = {l: out.layers[l].weight.ravel().copy() for l in cfg.layer_ids}
    touched: dict = {}

    current = loss(out, inputs, labels)
    initial = current
    iterations = {l: 0 for l in cfg.layer_ids}
    snapshots = {}
    reached = current > cfg.t_loss
    n_done = 0
    budget_hit = False

    for l in cfg.layer_ids:
        if reached or budget_hit:
            break
        layer = out.layers[l]
        flat = layer.weight.reshape(-1)
        snap = LayerSnapshot.capture(l, flat, cfg.alpha)
        snapshots[l] = snap
        mask = np.ones(flat.size, dtype=bool)
        for _ in range(cfg.max_iter_per_layer):
            if cfg.max_params is not None and n_done >= cfg.max_params:
                budget_hit = True
                break
            grad = layer_gradient(out, inputs, labels, l)
            try:
                t = _perturb_once(flat, originals[l], grad, mask, snap, cfg.theta)
            except LayerExhausted:
                break
            touched.setdefault((l, t), None)
            iterations[l] += 1
            n_done += 1
            current = loss(out, inputs, labels)
            if current > cfg.t_loss:
                reached = True
                break

    records = []
    for (l, t) in touched:
        new = out.layers[l].weight.reshape(-1)[t]
        delta = _exact_delta(new, originals[l][t])
        if delta != 0.0:
            records.append(PerturbRecord(l, int(t), delta))
    return EncryptionOutcome(out, records, current, reached, iterations, initial, snapshots)


def choose_layers(net: Network, count: int | None, seed: int) -> tuple:
    """Seeded shuffle of the encryptable layers, truncated to ``count``.

    The shuffled order is also the order in which layers get encrypted.
    ``count=None`` keeps every layer.
    """
    eligible = net.encryptable_layers
    if count is not None and count < 1:
        raise ValueError("layer count must be >= 1")
    order = np.random.default_rng(seed).permutation(len(eligible))
    return tuple(eligible[i] for i in order[:count])
