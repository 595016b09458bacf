"""Secret-key files and decryption.

A key binds to one encrypted checkpoint through its SHA-256 digest and lists,
per layer, the flat weight indices that were changed together with the exact
applied change. Deltas are written as hex IEEE-754 binary64 bit patterns so a
round trip through the file never alters them.

File layout (JSON)::

    {"version": 1,
     "model_digest": "<sha256 hex>",
     "layers": [{"layer_id": 4, "entries": [{"index": 17, "delta_bits": "3fb1..."}]}],
     "checksum": "<sha256 hex of the canonical body>"}
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import digest
from .encryption import EncryptionOutcome, PerturbRecord
from .nn import Network

KEY_VERSION = 1


class KeyError_(ValueError):
    """Malformed, corrupted or incompatible key file."""


class DigestMismatch(ValueError):
    """Key does not belong to the network it is applied to."""


def _bits(x: float) -> str:
    return struct.pack(">d", x).hex()


def _from_bits(s: str) -> float:
    raw = bytes.fromhex(s)
    if len(raw) != 8:
        raise KeyError_(f"delta_bits {s!r} is not a 64-bit pattern")
    return struct.unpack(">d", raw)[0]


@dataclass
class SecretKey:
    model_digest: str
    entries: list = field(default_factory=list)
    version: int = KEY_VERSION

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if (e.layer, e.index) in seen:
                raise KeyError_(f"duplicate key entry for layer {e.layer} index {e.index}")
            seen.add((e.layer, e.index))

    def __len__(self):
        return len(self.entries)

    def by_layer(self) -> dict:
        """Entries grouped per layer; layers appear in order of first use."""
        groups: dict = {}
        for e in self.entries:
            groups.setdefault(e.layer, []).append(e)
        return groups

    def body(self) -> dict:
        return {
            "version": self.version,
            "model_digest": self.model_digest,
            "layers": [
                {"layer_id": layer, "entries": [{"index": e.index, "delta_bits": _bits(e.delta)}
                                                for e in group]}
                for layer, group in self.by_layer().items()
            ],
        }


def make_key(outcome: EncryptionOutcome) -> SecretKey:
    return SecretKey(digest(outcome.network), list(outcome.records))


def _canonical(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def dumps_key(key: SecretKey) -> str:
    body = key.body()
    body["checksum"] = hashlib.sha256(_canonical(body)).hexdigest()
    return json.dumps(body, indent=1) + "\n"


def loads_key(text: str, source: str = "<key>") -> SecretKey:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise KeyError_(f"{source}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise KeyError_(f"{source}: key must be a JSON object")
    if doc.get("version") != KEY_VERSION:
        raise KeyError_(f"{source}: unsupported key version {doc.get('version')!r}")
    if not isinstance(doc.get("model_digest"), str):
        raise KeyError_(f"{source}: model_digest field missing")
    checksum = doc.pop("checksum", None)
    if checksum is None:
        raise KeyError_(f"{source}: checksum field missing")
    if hashlib.sha256(_canonical(doc)).hexdigest() != checksum:
        raise KeyError_(f"{source}: checksum mismatch, key file is corrupted")
    entries = []
    try:
        for group in doc["layers"]:
            layer = int(group["layer_id"])
            for e in group["entries"]:
                entries.append(PerturbRecord(layer, int(e["index"]), _from_bits(e["delta_bits"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise KeyError_(f"{source}: malformed layer table ({exc})") from exc
    return SecretKey(doc["model_digest"], entries, doc["version"])


def save_key(key: SecretKey, path) -> None:
    Path(path).write_text(dumps_key(key))


def load_key(path) -> SecretKey:
    path = Path(path)
    return loads_key(path.read_bytes().decode("utf-8", errors="replace"), source=str(path))


def apply_deltas(net: Network, entries, sign: float = -1.0) -> Network:
    """Return a copy of ``net`` with ``sign * delta`` added at every entry (no digest check)."""
    out = net.copy()
    for e in entries:
        if e.layer < 0 or e.layer >= len(out.layers) or not out.layers[e.layer].encryptable:
            raise IndexError(f"key entry refers to non-encryptable layer {e.layer}")
        flat = out.layers[e.layer].weight.reshape(-1)
        if not 0 <= e.index < flat.size:
            raise IndexError(f"index {e.index} out of range for layer {e.layer} ({flat.size} weights)")
        flat[e.index] = np.float32(float(flat[e.index]) + sign * e.delta)
    return out


def decrypt(net: Network, key: SecretKey) -> Network:
    """Remove every recorded perturbation; refuses keys minted for another model."""
    found = digest(net)
    if found != key.model_digest:
        raise DigestMismatch(f"key digest {key.model_digest[:12]}... does not match model {found[:12]}...")
    return apply_deltas(net, key.entries, sign=-1.0)
