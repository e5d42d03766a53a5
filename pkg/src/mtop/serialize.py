"""Versioned named-tensor container used for checkpoints and artifacts.

Layout: magic "MTOP1", a length-prefixed JSON config block, then a tensor
count followed by (identifier, shape, raw little-endian float32 payload)
triples. Round-trips are byte-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"MTOP1"


class ContainerError(ValueError):
    """Malformed or truncated container bytes."""


def dump_container(config: dict, tensors) -> bytes:
    """Serialize a config dict plus (name, array) pairs to bytes.

    `tensors` is a dict or an iterable of (name, array) pairs; iteration
    order is preserved so identical inputs produce identical bytes.
    """
    if isinstance(tensors, dict):
        tensors = tensors.items()
    out = [MAGIC]
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(cfg)))
    out.append(cfg)
    body = []
    count = 0
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f4")  # tobytes() emits C order regardless
        nb = name.encode("utf-8")
        body.append(struct.pack("<I", len(nb)))
        body.append(nb)
        body.append(struct.pack("<I", arr.ndim))
        body.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        body.append(arr.tobytes())
        count += 1
    out.append(struct.pack("<I", count))
    out.extend(body)
    return b"".join(out)


def load_container(data: bytes):
    """Parse container bytes back into (config, dict of name -> float32 array)."""
    if data[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"bad magic: expected {MAGIC!r}")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise ContainerError("truncated container")
        chunk = data[off:off + n]
        off += n
        return chunk

    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = arr.copy()
    return config, tensors


def save_container(path, config: dict, tensors) -> None:
    with open(path, "wb") as f:
        f.write(dump_container(config, tensors))


def load_container_file(path):
    with open(path, "rb") as f:
        return load_container(f.read())


def fingerprint(tensors) -> str:
    """Order-independent hash of (identifier, shape, payload) triples."""
    if isinstance(tensors, dict):
        tensors = tensors.items()
    h = hashlib.sha256()
    for name, arr in sorted(tensors, key=lambda kv: kv[0]):
        arr = np.asarray(arr, dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(struct.pack(f"<I{arr.ndim}q", arr.ndim, *arr.shape))
        h.update(arr.tobytes())
    return h.hexdigest()
