"""Small deterministic neural-network engine.

Parameters are stored as float32 numpy arrays. Forward and backward passes
run in float64 and gradients are rounded back to float32, so the same
network and batch always produce bitwise-identical losses and gradients.

Supported layers: Dense, Conv2d (no padding), ReLU, Flatten and MaxPool2d.
Only Dense and Conv2d carry weights and are eligible for encryption.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an input or parameter does not fit the network."""


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "layer"
    encryptable = False
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def descriptor(self) -> tuple[int, ...]:
        return ()

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError


class Dense(Layer):
    """Fully connected layer computing ``x @ W + b`` with ``W`` of shape (in, out)."""

    kind = "dense"
    encryptable = True

    def __init__(self, n_in: int, n_out: int, weight=None, bias=None):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.weight = _as_param(weight, (self.n_in, self.n_out))
        self.bias = _as_param(bias, (self.n_out,))

    def descriptor(self):
        return (self.n_in, self.n_out)

    def output_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeError(f"Dense({self.n_in}, {self.n_out}) got input shape {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        out = x @ self.weight.astype(np.float64) + self.bias.astype(np.float64)
        return out, x

    def backward(self, dout, cache):
        x = cache
        dw = x.T @ dout
        db = dout.sum(axis=0)
        dx = dout @ self.weight.astype(np.float64).T
        return dx, dw, db


class Conv2d(Layer):
    """2-D convolution without padding; weight shape (out_ch, in_ch, kh, kw)."""

    kind = "conv2d"
    encryptable = True

    def __init__(self, in_ch: int, out_ch: int, kh: int, kw: int, stride: int = 1,
                 weight=None, bias=None):
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kh, self.kw, self.stride = int(kh), int(kw), int(stride)
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        self.weight = _as_param(weight, (self.out_ch, self.in_ch, self.kh, self.kw))
        self.bias = _as_param(bias, (self.out_ch,))

    def descriptor(self):
        return (self.in_ch, self.out_ch, self.kh, self.kw, self.stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"Conv2d expects ({self.in_ch}, H, W) input, got {in_shape}")
        _, h, w = in_shape
        if h < self.kh or w < self.kw:
            raise ShapeError(f"Conv2d kernel {self.kh}x{self.kw} larger than input {h}x{w}")
        return (self.out_ch, (h - self.kh) // self.stride + 1, (w - self.kw) // self.stride + 1)

    def _windows(self, x):
        # (N, C, OH, OW, kh, kw)
        win = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        return win[:, :, ::self.stride, ::self.stride]

    def forward(self, x):
        win = self._windows(x)
        out = np.einsum("ncijkl,ockl->noij", win, self.weight.astype(np.float64))
        out += self.bias.astype(np.float64)[None, :, None, None]
        return out, x

    def backward(self, dout, cache):
        x = cache
        win = self._windows(x)
        dw = np.einsum("ncijkl,noij->ockl", win, dout)
        db = dout.sum(axis=(0, 2, 3))
        w64 = self.weight.astype(np.float64)
        dx = np.zeros_like(x)
        oh, ow = dout.shape[2], dout.shape[3]
        s = self.stride
        for a in range(self.kh):
            for b in range(self.kw):
                # contribution of kernel tap (a, b) to every input pixel it touched
                contrib = np.einsum("noij,oc->ncij", dout, w64[:, :, a, b])
                dx[:, :, a:a + s * (oh - 1) + 1:s, b:b + s * (ow - 1) + 1:s] += contrib
        return dx, dw, db


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dout, cache):
        return np.where(cache, dout, 0.0), None, None


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), None, None


class MaxPool2d(Layer):
    """Non-overlapping k x k max pooling; trailing rows/cols that do not fill a window are dropped."""

    kind = "maxpool2d"

    def __init__(self, k: int = 2):
        self.k = int(k)
        if self.k < 1:
            raise ShapeError("pool size must be >= 1")

    def descriptor(self):
        return (self.k,)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2d expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if h < self.k or w < self.k:
            raise ShapeError(f"MaxPool2d window {self.k} larger than input {h}x{w}")
        return (c, h // self.k, w // self.k)

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.k
        oh, ow = h // k, w // k
        blocks = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        # argmax returns the first maximum, so ties go to the lowest window position
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, dout, cache):
        shape, arg = cache
        n, c, h, w = shape
        k = self.k
        oh, ow = dout.shape[2], dout.shape[3]
        grad = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(grad, arg[..., None], dout[..., None], axis=-1)
        grad = grad.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(shape)
        dx[:, :, :oh * k, :ow * k] = grad.reshape(n, c, oh * k, ow * k)
        return dx, None, None


def _as_param(value, shape):
    if value is None:
        return np.zeros(shape, dtype=np.float32)
    arr = np.array(value, dtype=np.float32)
    if arr.shape != tuple(shape):
        raise ShapeError(f"parameter shape {arr.shape} does not match {tuple(shape)}")
    return arr


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, Flatten, MaxPool2d)}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass
class Network:
    layers: list
    input_shape: tuple
    name: str = "net"
    class_count: int = field(default=0)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ShapeError(f"network output must be a vector, got shape {shape}")
        if self.class_count == 0:
            self.class_count = shape[0]
        if shape[0] != self.class_count:
            raise ShapeError(f"output dimension {shape[0]} != class_count {self.class_count}")

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    @property
    def encryptable_layers(self) -> list[int]:
        """Indices of layers that own a weight tensor."""
        return [i for i, layer in enumerate(self.layers) if layer.encryptable]

    def n_weights(self) -> int:
        return sum(self.layers[i].weight.size for i in self.encryptable_layers)

    def n_params(self) -> int:
        return sum(self.layers[i].weight.size + self.layers[i].bias.size
                   for i in self.encryptable_layers)


def mlp(sizes, seed: int = 0, name: str = "mlp") -> Network:
    """Build a ReLU MLP with He-initialised weights, e.g. ``mlp([32, 64, 10])``."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        layers.append(Dense(n_in, n_out, weight=w))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Network(layers, input_shape=(sizes[0],), name=name)


def small_cnn(input_shape=(1, 28, 28), classes: int = 10, channels: int = 8,
              hidden: int = 64, seed: int = 0, name: str = "cnn") -> Network:
    """Conv(3x3) -> ReLU -> MaxPool(2) -> Flatten -> Dense -> ReLU -> Dense."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    conv_w = rng.normal(0.0, np.sqrt(2.0 / (c * 9)), size=(channels, c, 3, 3))
    flat = channels * ((h - 2) // 2) * ((w - 2) // 2)
    layers = [
        Conv2d(c, channels, 3, 3, weight=conv_w),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
        Dense(flat, hidden, weight=rng.normal(0.0, np.sqrt(2.0 / flat), size=(flat, hidden))),
        ReLU(),
        Dense(hidden, classes, weight=rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, classes))),
    ]
    return Network(layers, input_shape=input_shape, name=name)


# ---------------------------------------------------------------------------
# Forward / loss / gradients
# ---------------------------------------------------------------------------


def _check_inputs(net: Network, inputs) -> np.ndarray:
    x = np.asarray(inputs)
    if x.ndim < 1 or tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(f"input batch shape {x.shape} does not match network input {net.input_shape}")
    return x.astype(np.float64)


def _forward(net: Network, inputs, keep_cache: bool = False):
    x = _check_inputs(net, inputs)
    caches = []
    for layer in net.layers:
        x, cache = layer.forward(x)
        if keep_cache:
            caches.append(cache)
    return x, caches


def forward(net: Network, inputs) -> np.ndarray:
    """Return float32 logits of shape (N, C)."""
    logits, _ = _forward(net, inputs)
    return logits.astype(np.float32)


def _check_labels(labels, n: int, classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    return y.astype(np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ShapeError(f"logits must be a non-empty (N, C) array, got {z.shape}")
    y = _check_labels(labels, z.shape[0], z.shape[1])
    logp = _log_softmax(z)
    # -0.0 -> 0.0 and tiny negative rounding noise clamps to the bound
    return max(float(-logp[np.arange(len(y)), y].mean()), 0.0)


def loss(net: Network, inputs, labels) -> float:
    logits, _ = _forward(net, inputs)
    return cross_entropy(logits, labels)


@dataclass
class Gradients:
    """Per-layer float32 gradients keyed by layer index."""

    weights: dict
    biases: dict
    loss: float

    def __getitem__(self, layer_id):
        return self.weights[layer_id]


def param_gradients(net: Network, inputs, labels, layers=None) -> Gradients:
    """Backprop gradients of the mean cross-entropy over the whole batch.

    ``layers`` restricts which layer gradients are returned; the backward
    pass stops once the earliest requested layer has been reached.
    """
    x = np.asarray(inputs)
    if x.ndim == 0 or x.shape[0] == 0:
        raise ShapeError("gradient requires a non-empty batch")
    logits, caches = _forward(net, x, keep_cache=True)
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    n = len(y)
    logp = _log_softmax(logits)
    value = max(float(-logp[np.arange(n), y].mean()), 0.0)

    wanted = set(net.encryptable_layers if layers is None else layers)
    stop = min(wanted) if wanted else len(net.layers)
    dout = np.exp(logp)
    dout[np.arange(n), y] -= 1.0
    dout /= n
    weights, biases = {}, {}
    for i in range(len(net.layers) - 1, stop - 1, -1):
        layer = net.layers[i]
        dout, dw, db = layer.backward(dout, caches[i])
        if layer.encryptable and i in wanted:
            weights[i] = dw.astype(np.float32)
            biases[i] = db.astype(np.float32)
    return Gradients(weights, biases, value)


def predict(net: Network, inputs) -> np.ndarray:
    logits, _ = _forward(net, inputs)
    # np.argmax picks the first maximum: ties resolve to the lowest class index
    return logits.argmax(axis=1)


def evaluate_accuracy(net: Network, inputs, labels, batch_size: int = 4096) -> float:
    y = np.asarray(labels)
    if len(y) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    correct = 0
    for start in range(0, len(y), batch_size):
        pred = predict(net, inputs[start:start + batch_size])
        correct += int((pred == y[start:start + batch_size]).sum())
    return correct / len(y)


# ---------------------------------------------------------------------------
# Optimisers and training
# ---------------------------------------------------------------------------


def _param_slots(net: Network):
    for i in net.encryptable_layers:
        yield (i, "weight"), net.layers[i]
        yield (i, "bias"), net.layers[i]


def _grad_for(grads: Gradients, key):
    i, attr = key
    table = grads.weights if attr == "weight" else grads.biases
    return table.get(i)


class SGD:
    """SGD with classical momentum: ``v = m*v + g; w -= lr*v``."""

    def __init__(self, lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.momentum = lr, momentum
        self.velocity = {}

    def step(self, net: Network, grads: Gradients) -> Network:
        for key, layer in _param_slots(net):
            g = _grad_for(grads, key)
            if g is None:
                continue
            p = getattr(layer, key[1])
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} at {key}")
            v = self.momentum * self.velocity.get(key, 0.0) + g.astype(np.float64)
            self.velocity[key] = v
            setattr(layer, key[1], (p.astype(np.float64) - self.lr * v).astype(np.float32))
        return net


class Adam:
    """Bias-corrected Adam."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, net: Network, grads: Gradients, t: int | None = None) -> Network:
        t = self.t + 1 if t is None else t
        if t < 1:
            raise ValueError("Adam step count t must be >= 1")
        self.t = t
        b1, b2 = self.beta1, self.beta2
        for key, layer in _param_slots(net):
            g = _grad_for(grads, key)
            if g is None:
                continue
            p = getattr(layer, key[1])
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} at {key}")
            g = g.astype(np.float64)
            m = b1 * self.m.get(key, 0.0) + (1 - b1) * g
            v = b2 * self.v.get(key, 0.0) + (1 - b2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            upd = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            setattr(layer, key[1], (p.astype(np.float64) - upd).astype(np.float32))
        return net


def sgd_step(net: Network, grads: Gradients, lr: float, momentum: float = 0.0,
             velocity: dict | None = None) -> Network:
    """One SGD update on a copy of ``net``; ``velocity`` carries momentum state between calls."""
    opt = SGD(lr, momentum)
    if velocity is not None:
        opt.velocity = velocity
    return opt.step(net.copy(), grads)


def adam_step(net: Network, grads: Gradients, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int = 1,
              state: dict | None = None) -> Network:
    """One Adam update on a copy of ``net``; ``state`` holds the ``m``/``v`` moment dicts."""
    if t < 1:
        raise ValueError("Adam step count t must be >= 1")
    opt = Adam(lr, beta1, beta2, eps)
    if state is not None:
        opt.m = state.setdefault("m", {})
        opt.v = state.setdefault("v", {})
    return opt.step(net.copy(), grads, t=t)


def make_optimizer(name: str, lr: float, momentum: float = 0.9):
    if name == "sgd":
        return SGD(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def train(net: Network, inputs, labels, *, optimizer: str = "sgd", lr: float = 0.1,
          momentum: float = 0.9, epochs: int = 10, batch_size: int = 128,
          weight_decay: float = 0.0, seed: int = 0, callback=None) -> Network:
    """Minibatch training of all weights and biases; returns a new network.

    ``weight_decay`` adds an L2 penalty on weights (not biases) to each
    gradient. ``callback(epoch, net)`` is invoked after every epoch when given.
    """
    net = net.copy()
    inputs = np.asarray(inputs)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    opt = make_optimizer(optimizer, lr, momentum)
    rng = np.random.default_rng(seed)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            grads = param_gradients(net, inputs[idx], labels[idx])
            if weight_decay:
                for i, g in grads.weights.items():
                    g += np.float32(weight_decay) * net.layers[i].weight
            opt.step(net, grads)
        if callback is not None:
            callback(epoch, net)
    return net
