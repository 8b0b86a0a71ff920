"""Portable checkpoint: JSON manifest + raw little-endian float32 payload.

Layout::

    b"DFLCKPT\\0" | uint32 format_version | uint64 header_len | header (UTF-8 JSON) | payload

The header holds ``manifest`` (name, shape, dtype, offset, length per tensor,
offsets relative to the payload start) and ``metadata`` (encoder config,
vocabulary, tagsets, run configuration, best dev F1).
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any

import numpy as np

from . import crf
from .corpus import TASKS, Tagset, Vocab
from .multitask import JointModel
from .nn import LAYER_TENSORS, EncoderConfig, EncoderParams, sinusoidal_table

MAGIC = b"DFLCKPT\x00"
FORMAT_VERSION = 1
_DTYPE = "<f4"
_PREFIX = struct.Struct("<IQ")


class CheckpointError(ValueError):
    pass


def to_bytes(model: JointModel, metadata: dict[str, Any] | None = None) -> bytes:
    cfg = model.config
    manifest = []
    chunks = []
    offset = 0
    for name, arr in model.named_params().items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": _DTYPE,
                         "offset": offset, "length": len(data)})
        chunks.append(data)
        offset += len(data)
    meta = {
        "encoder": {k: getattr(cfg, k) for k in ("vocab_size", "num_layers", "num_heads", "d_model",
                                                 "d_ff", "dropout_rate", "max_len")},
        "heads": [t for t in TASKS if t in model.heads],
        "vocab": list(model.vocab.words),
        "tagsets": {t: list(ts.labels) for t, ts in model.tagsets.items()},
        **(metadata or {}),
    }
    header = json.dumps({"format_version": FORMAT_VERSION, "manifest": manifest, "metadata": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _PREFIX.pack(FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def save(model: JointModel, path: str | os.PathLike, metadata: dict[str, Any] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(model, metadata))


def from_bytes(blob: bytes) -> tuple[JointModel, dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a dfl checkpoint (bad magic)")
    start = len(MAGIC)
    if len(blob) < start + _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    version, hlen = _PREFIX.unpack_from(blob, start)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    start += _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        manifest, meta = header["manifest"], header["metadata"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[start + hlen :]

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for entry in manifest:
        name, off, length = entry["name"], entry["offset"], entry["length"]
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name}")
        if entry["dtype"] != _DTYPE:
            raise CheckpointError(f"unsupported dtype {entry['dtype']} for {name}")
        if off < 0 or off + length > len(payload):
            raise CheckpointError(f"tensor {name} lies outside the payload")
        shape = tuple(entry["shape"])
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"tensor {name}: length does not match shape")
        spans.append((off, off + length, name))
        tensors[name] = np.frombuffer(payload[off : off + length], dtype=_DTYPE).reshape(shape) \
            .astype(np.float32)
    spans.sort()
    for (_, end, a), (beg, _, b) in zip(spans, spans[1:]):
        if beg < end:
            raise CheckpointError(f"tensors {a} and {b} overlap")

    cfg = EncoderConfig(**meta["encoder"])
    enc_names = {k[4:]: v for k, v in tensors.items() if k.startswith("enc.")}
    expected = ["emb"] + [f"l{l}.{k}" for l in range(cfg.num_layers) for k in LAYER_TENSORS]
    missing = set(expected) ^ set(enc_names)
    if missing:
        raise CheckpointError(f"encoder tensors missing or unexpected: {sorted(missing)}")
    encoder = EncoderParams(cfg, {k: enc_names[k] for k in expected},
                            sinusoidal_table(cfg.max_len, cfg.d_model).astype(np.float32))
    heads = {}
    for task in meta["heads"]:
        try:
            heads[task] = crf.CrfHead(task, *(tensors[f"{task}.{k}"] for k in ("W", "b", "T", "s", "e")))
        except KeyError as exc:
            raise CheckpointError(f"missing head tensor {exc}") from None
    tagsets = {t: Tagset(t, labels) for t, labels in meta["tagsets"].items()}
    model = JointModel(encoder, heads, Vocab(meta["vocab"]), tagsets)
    if len(model.named_params()) != len(tensors):
        raise CheckpointError("checkpoint holds tensors that belong to no model component")
    return model, meta


def load(path: str | os.PathLike) -> tuple[JointModel, dict[str, Any]]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def user_metadata(meta: dict[str, Any]) -> dict[str, Any]:
    """Metadata minus the keys the format manages itself."""
    return {k: v for k, v in meta.items() if k not in ("encoder", "heads", "vocab", "tagsets")}
