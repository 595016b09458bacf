"""Shared fixtures-by-function: cached desk runs and a plain-numpy reference MLP."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from advparams import nn
from advparams.pipeline import RunConfig, build_data, run_encryption, train_model


@lru_cache(maxsize=None)
def desk_run(seed: int):
    """Default desk pipeline for one seed: (cfg, train, test, net, encryption run)."""
    cfg = RunConfig(seed=seed)
    train, test = build_data(cfg)
    net = train_model(cfg, train)
    return cfg, train, test, net, run_encryption(cfg, net, train, test)


def random_mlp(rng, sizes):
    net = nn.mlp(sizes, seed=int(rng.integers(1 << 30)))
    for i in net.encryptable_layers:
        net.layers[i].bias = rng.normal(0, 0.1, net.layers[i].bias.shape).astype(np.float32)
    return net


def reference_loss(weights, biases, x, y):
    """Mean cross-entropy of a ReLU MLP, written out independently in float64."""
    h = np.asarray(x, dtype=np.float64)
    for k, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, dtype=np.float64) + np.asarray(b, dtype=np.float64)
        if k < len(weights) - 1:
            h = np.maximum(h, 0.0)
    m = h.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(h - m).sum(axis=1))
    return float(np.mean(lse - h[np.arange(len(y)), y]))


def mlp_params(net):
    ids = net.encryptable_layers
    return ([net.layers[i].weight.astype(np.float64) for i in ids],
            [net.layers[i].bias.astype(np.float64) for i in ids])


def kink_distance(net, x):
    """Per-sample distance to the nearest ReLU kink or max-pool tie, in float64."""
    h = np.asarray(x, dtype=np.float64)
    dist = np.full(len(h), np.inf)
    for layer in net.layers:
        if layer.kind == "relu":
            dist = np.minimum(dist, np.abs(h).reshape(len(h), -1).min(axis=1))
        elif layer.kind == "maxpool2d":
            n, c, hh, ww = h.shape
            k = layer.k
            blocks = h[:, :, :hh // k * k, :ww // k * k].reshape(n, c, hh // k, k, ww // k, k)
            blocks = np.sort(blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, -1, k * k), axis=-1)
            dist = np.minimum(dist, (blocks[..., -1] - blocks[..., -2]).min(axis=1))
        h, _ = layer.forward(h)
    return dist


def smooth_batch(net, rng, n, margin=0.05):
    """Draw ``n`` standard-normal inputs whose finite-difference stencil stays off every kink."""
    keep = []
    while len(keep) < n:
        cand = rng.normal(size=(64, *net.input_shape))
        keep.extend(cand[kink_distance(net, cand) >= margin])
    return np.asarray(keep[:n])
