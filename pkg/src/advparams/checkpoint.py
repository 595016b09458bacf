"""Binary checkpoint format.

Layout (little-endian)::

    b"ADVP"            magic
    u16                format version (1)
    u16 + bytes        network name, utf-8
    u32                class count
    u8 + u32[]         input shape
    u16                layer count
    per layer:         u8 kind code, u8 n_dims, u32[] descriptor dims
    per weighted layer, in layer order: f32[] weight, f32[] bias
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .nn import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU

MAGIC = b"ADVP"
VERSION = 1

_KIND_CODES = {"dense": 1, "conv2d": 2, "relu": 3, "flatten": 4, "maxpool2d": 5}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class CheckpointError(ValueError):
    pass


def to_bytes(net: Network) -> bytes:
    name = net.name.encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<H", len(name)), name,
             struct.pack("<I", net.class_count),
             struct.pack("<B", len(net.input_shape)),
             struct.pack(f"<{len(net.input_shape)}I", *net.input_shape),
             struct.pack("<H", len(net.layers))]
    for layer in net.layers:
        dims = layer.descriptor()
        parts.append(struct.pack("<BB", _KIND_CODES[layer.kind], len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for layer in net.layers:
        if layer.encryptable:
            parts.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes, source: str = "<bytes>") -> Network:
    r = _Reader(buf, source)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not an ADVP checkpoint")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode("utf-8")
    (classes,) = r.unpack("<I")
    (ndim,) = r.unpack("<B")
    input_shape = r.unpack(f"<{ndim}I")
    (n_layers,) = r.unpack("<H")
    specs = []
    for _ in range(n_layers):
        code, nd = r.unpack("<BB")
        if code not in _CODE_KINDS:
            raise CheckpointError(f"{source}: unknown layer kind code {code}")
        specs.append((_CODE_KINDS[code], r.unpack(f"<{nd}I")))

    layers = []
    for kind, dims in specs:
        if kind == "dense":
            layers.append(Dense(*dims))
        elif kind == "conv2d":
            layers.append(Conv2d(*dims))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            layers.append(MaxPool2d(*dims))
    for layer in layers:
        if layer.encryptable:
            for attr in ("weight", "bias"):
                shape = getattr(layer, attr).shape
                n = int(np.prod(shape))
                arr = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
                setattr(layer, attr, arr)
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes")
    try:
        return Network(layers, input_shape=input_shape, name=name, class_count=classes)
    except ValueError as exc:
        raise CheckpointError(f"{source}: inconsistent layer table ({exc})") from exc


def save_checkpoint(net: Network, path) -> bytes:
    data = to_bytes(net)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path) -> Network:
    path = Path(path)
    return from_bytes(path.read_bytes(), source=str(path))


def digest(net: Network) -> str:
    """SHA-256 hex digest of the canonical checkpoint bytes."""
    return hashlib.sha256(to_bytes(net)).hexdigest()
