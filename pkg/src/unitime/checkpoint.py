"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"UNTM"  u32 format_version
    repeated, in this order: config, vocab, tensors, payload, meta
        u32 name_len, name (ascii), u64 body_len, body

``config`` is the resolved run-config text, ``vocab`` the vocabulary tokens
joined by newlines, ``tensors`` a JSON directory ``[[name, [dims...]], ...]``,
``payload`` the float64 little-endian values of every tensor in directory
order, and ``meta`` a JSON object of training metadata. JSON is written with
sorted keys so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"UNTM"
FORMAT_VERSION = 1
SECTIONS = ("config", "vocab", "tensors", "payload", "meta")
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _section(name: str, body: bytes) -> bytes:
    raw = name.encode("ascii")
    return struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(body)) + body


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory = [[name, list(arr.shape)] for name, arr in ckpt.tensors.items()]
    payload = b"".join(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes() for arr in ckpt.tensors.values())
    bodies = {
        "config": ckpt.config_text.encode("utf-8"),
        "vocab": "\n".join(ckpt.vocab).encode("utf-8"),
        "tensors": json.dumps(directory, separators=(",", ":")).encode("utf-8"),
        "payload": payload,
        "meta": json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8"),
    }
    out = [MAGIC, struct.pack("<I", ckpt.version)]
    out += [_section(name, bodies[name]) for name in SECTIONS]
    return b"".join(out)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    off = 8
    bodies = {}
    for expected in SECTIONS:
        try:
            (n,) = struct.unpack_from("<I", buf, off)
            name = buf[off + 4:off + 4 + n].decode("ascii")
            off += 4 + n
            (size,) = struct.unpack_from("<Q", buf, off)
            off += 8
        except struct.error:
            raise CheckpointError(f"truncated checkpoint while reading section {expected!r}") from None
        if name != expected:
            raise CheckpointError(f"expected section {expected!r}, found {name!r}")
        if off + size > len(buf):
            raise CheckpointError(f"section {name!r} runs past end of file")
        bodies[name] = buf[off:off + size]
        off += size
    if off != len(buf):
        raise CheckpointError("trailing bytes after the last section")
    directory = json.loads(bodies["tensors"].decode("utf-8"))
    payload = bodies["payload"]
    tensors = {}
    pos = 0
    for name, shape in directory:
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * 8
        if pos + nbytes > len(payload):
            raise CheckpointError(f"payload too short for tensor {name!r}")
        arr = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(payload):
        raise CheckpointError("payload has bytes not described by the tensor directory")
    vocab_text = bodies["vocab"].decode("utf-8")
    return Checkpoint(
        config_text=bodies["config"].decode("utf-8"),
        vocab=vocab_text.split("\n") if vocab_text else [],
        tensors=tensors,
        meta=json.loads(bodies["meta"].decode("utf-8")),
        version=version,
    )


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def from_model(model, config_text: str, meta: Mapping | None = None,
               arrays: Mapping[str, np.ndarray] | None = None) -> Checkpoint:
    arrays = arrays if arrays is not None else model.named_arrays()
    return Checkpoint(config_text, list(model.vocab.tokens), {k: np.asarray(v) for k, v in arrays.items()},
                      dict(meta or {}))
