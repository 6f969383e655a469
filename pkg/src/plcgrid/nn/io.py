"""Binary container for network weights.

Layout: 8-byte magic, uint32 format version, uint32 header length, a UTF-8
JSON header (architecture spec, parameter names and shapes, metadata), then
the parameters as little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .layers import NNError, Sequential, layer_from_spec

MAGIC = b"PLCNN\x00\x00\x01"
FORMAT_VERSION = 1


def dumps(net: Sequential, metadata: dict = None) -> bytes:
    named = net.named_params()
    header = {
        "spec": net.spec(),
        "seed": net.seed,
        "params": [{"name": k, "shape": list(p.shape), "frozen": p.frozen} for k, p in named.items()],
        "metadata": metadata or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in named.values())
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(raw)) + raw + body


def loads(blob: bytes) -> Tuple[Sequential, dict]:
    if blob[: len(MAGIC)] != MAGIC:
        raise NNError("not a weights file")
    version, hlen = struct.unpack("<II", blob[len(MAGIC) : len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise NNError(f"unsupported weights version {version}")
    start = len(MAGIC) + 8
    header = json.loads(blob[start : start + hlen].decode())
    net = layer_from_spec(header["spec"])
    net.seed = header.get("seed")
    named = net.named_params()
    offset = start + hlen
    for entry in header["params"]:
        p = named.get(entry["name"])
        if p is None or list(p.shape) != entry["shape"]:
            raise NNError(f"parameter {entry['name']} does not match the architecture")
        n = int(np.prod(entry["shape"]))
        p.data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(entry["shape"]).astype(np.float64)
        p.grad = np.zeros_like(p.data)
        p.frozen = entry["frozen"]
        offset += 8 * n
    if offset != len(blob):
        raise NNError("trailing bytes in weights file")
    return net, header["metadata"]


def save(net: Sequential, path: Union[str, Path], metadata: dict = None):
    Path(path).write_bytes(dumps(net, metadata))


def load(path: Union[str, Path]) -> Tuple[Sequential, dict]:
    return loads(Path(path).read_bytes())
