"""Accuracy drop, parameter accounting and weight-distribution checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Network


def accuracy_drop(acc_original: float, acc_encrypted: float) -> float:
    """A_d = A_o - A_e. Negative values (encryption helped) are returned as-is."""
    for a in (acc_original, acc_encrypted):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"accuracy {a} outside [0, 1]")
    return acc_original - acc_encrypted


@dataclass
class WeightStats:
    per_layer: dict          # layer id -> (min, max)
    mean: float
    std: float
    count: int


def weight_stats(net: Network) -> WeightStats:
    """Per-layer min/max and the global mean/std (population) of all weights.

    Biases are left out; they are never encrypted. Moments are accumulated in
    one pass over the layers with float64 sums.
    """
    layers = net.encryptable_layers
    if not layers:
        raise ValueError("network has no weight layers")
    per_layer = {}
    n, s, ss = 0, 0.0, 0.0
    for i in layers:
        w = net.layers[i].weight.astype(np.float64).ravel()
        per_layer[i] = (float(w.min()), float(w.max()))
        n += w.size
        s += float(w.sum())
        ss += float(np.dot(w, w))
    mean = s / n
    var = max(ss / n - mean * mean, 0.0)
    return WeightStats(per_layer, mean, float(np.sqrt(var)), n)


def changed_weights(a: Network, b: Network) -> list[tuple[int, int]]:
    """(layer, flat index) of every weight whose bit pattern differs between ``a`` and ``b``."""
    _check_same_arch(a, b)
    out = []
    for i in a.encryptable_layers:
        wa = a.layers[i].weight.reshape(-1).view(np.uint32)
        wb = b.layers[i].weight.reshape(-1).view(np.uint32)
        out.extend((i, int(j)) for j in np.flatnonzero(wa != wb))
    return out


def _check_same_arch(a: Network, b: Network) -> None:
    if a.input_shape != b.input_shape or len(a.layers) != len(b.layers):
        raise ValueError("networks have different architectures")
    for la, lb in zip(a.layers, b.layers):
        if la.kind != lb.kind or la.descriptor() != lb.descriptor():
            raise ValueError("networks have different architectures")


@dataclass
class StealthReport:
    in_range: bool                      # every encrypted weight inside its clip band
    within_layer_range: bool            # ...and therefore inside the original [min, max]
    violations: list                    # (layer, index, value, lower, upper)
    encrypted_values: dict              # layer -> list of encrypted weight values
    bands: dict                         # layer -> (min, max, lower, upper)
    mean_before: float
    mean_after: float
    std_before: float
    std_after: float

    @property
    def delta_mean(self) -> float:
        return abs(self.mean_after - self.mean_before)

    @property
    def delta_std(self) -> float:
        return abs(self.std_after - self.std_before)


def clip_band(weights: np.ndarray, alpha: float) -> tuple[float, float, float, float]:
    w_min, w_max = float(weights.min()), float(weights.max())
    span = w_max - w_min
    return w_min, w_max, w_min + alpha * span, w_max - alpha * span


def stealth_report(original: Network, encrypted: Network, entries, alpha: float) -> StealthReport:
    """Check every keyed weight against the clip band of its original layer.

    ``entries`` is any iterable of objects with ``layer`` and ``index``
    (key entries or encryption records).
    """
    _check_same_arch(original, encrypted)
    bands, values, violations = {}, {}, []
    in_layer = True
    for e in entries:
        if e.layer not in bands:
            bands[e.layer] = clip_band(original.layers[e.layer].weight, alpha)
        w_min, w_max, lo, hi = bands[e.layer]
        v = float(encrypted.layers[e.layer].weight.reshape(-1)[e.index])
        values.setdefault(e.layer, []).append(v)
        if not lo <= v <= hi:
            violations.append((e.layer, e.index, v, lo, hi))
        in_layer &= w_min <= v <= w_max
    before, after = weight_stats(original), weight_stats(encrypted)
    return StealthReport(not violations, in_layer, violations, values, bands,
                         before.mean, after.mean, before.std, after.std)


@dataclass
class EvalReport:
    acc_original: float
    acc_encrypted: float
    n_encrypted: int
    n_all: int
    loss_before: float = float("nan")
    loss_after: float = float("nan")
    reached_threshold: bool = False
    stealth: StealthReport | None = None
    extra: dict = field(default_factory=dict)

    @property
    def acc_drop(self) -> float:
        return accuracy_drop(self.acc_original, self.acc_encrypted)

    @property
    def proportion(self) -> float:
        return self.n_encrypted / self.n_all

    def rows(self) -> list[tuple[str, str]]:
        rows = [
            ("A_o", f"{100 * self.acc_original:.2f}%"),
            ("A_e", f"{100 * self.acc_encrypted:.2f}%"),
            ("A_d", f"{100 * self.acc_drop:.2f}%"),
            ("n_e", str(self.n_encrypted)),
            ("n_all", str(self.n_all)),
            ("proportion", f"{100 * self.proportion:.6f}%"),
            ("loss_before", f"{self.loss_before:.6f}"),
            ("loss_after", f"{self.loss_after:.6f}"),
            ("reached_threshold", str(self.reached_threshold).lower()),
        ]
        if self.stealth is not None:
            s = self.stealth
            rows += [
                ("in_clip_band", str(s.in_range).lower()),
                ("mean_before", f"{s.mean_before:.8f}"),
                ("mean_after", f"{s.mean_after:.8f}"),
                ("std_before", f"{s.std_before:.8f}"),
                ("std_after", f"{s.std_after:.8f}"),
            ]
        return rows

    def to_text(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        return "".join(f"{k:<{width}}  {v}\n" for k, v in self.rows())

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "stealth"}
        d.update(acc_drop=self.acc_drop, proportion=self.proportion)
        if self.stealth is not None:
            s = self.stealth
            d["stealth"] = {
                "in_clip_band": s.in_range,
                "within_layer_range": s.within_layer_range,
                "violations": [list(v) for v in s.violations],
                "layers": {str(l): {"min": b[0], "max": b[1], "lower": b[2], "upper": b[3],
                                    "encrypted_values": s.encrypted_values.get(l, [])}
                           for l, b in s.bands.items()},
                "mean_before": s.mean_before, "mean_after": s.mean_after,
                "std_before": s.std_before, "std_after": s.std_after,
            }
        return d
