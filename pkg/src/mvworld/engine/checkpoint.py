"""Checkpoint files: a named-tensor manifest plus a JSON metadata section.

Little-endian layout:

    magic    "MWCK" (4 bytes)
    version  u32 = 1
    meta     u32 byte length + UTF-8 JSON (model/train configs, iteration,
             RNG scheme, config hash)
    manifest u32 entry count, then per entry:
                 u32 name length + UTF-8 name
                 u32 ndim + ndim x u32 dims
                 u8 dtype tag (0=f32, 1=f64, 2=u8, 3=i64)
    payload  raw little-endian tensor bytes, concatenated in manifest order
    crc32    u32 over all preceding bytes

Entries are written in sorted-name order so identical tensor sets produce
identical bytes. Every name must live in exactly one of the namespaces
macm./gse./net./idm.; optimizer moments ride along as "<param>#m" and
"<param>#v" inside their parameter's namespace, which keeps exact training
resume possible without extra sections. Byte offsets within the payload are
implied by the manifest and are reported on load.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import BadMagicError, ChecksumError, TruncationError, VersionMismatchError

MAGIC = b"MWCK"
VERSION = 1

NAMESPACES = ("macm.", "gse.", "net.", "idm.")

_DTYPE_TAGS: dict[np.dtype, int] = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i8"): 3,
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass
class ManifestEntry:
    name: str
    shape: tuple[int, ...]
    dtype: np.dtype
    offset: int


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict
    manifest: list[ManifestEntry]


def _check_namespace(name: str):
    if sum(name.startswith(ns) for ns in NAMESPACES) != 1:
        raise ValueError(
            f"tensor name {name!r} must live in exactly one namespace of {NAMESPACES}"
        )


def checkpoint_to_bytes(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_raw)))
    parts.append(meta_raw)
    names = sorted(tensors)
    parts.append(struct.pack("<I", len(names)))
    payload_parts = []
    for name in names:
        _check_namespace(name)
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dtype not in _DTYPE_TAGS:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", _DTYPE_TAGS[dtype]))
        payload_parts.append(arr.astype(dtype, copy=False).tobytes())
    parts.extend(payload_parts)
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_to_bytes(tensors, meta))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"checkpoint truncated: needed {self.pos + n} bytes, have {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"bad magic, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", r.take(4))
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", r.take(4))
    entries: list[ManifestEntry] = []
    offset = 0
    for _ in range(count):
        (name_len,) = struct.unpack("<I", r.take(4))
        name = r.take(name_len).decode("utf-8")
        _check_namespace(name)
        (ndim,) = struct.unpack("<I", r.take(4))
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        (tag,) = struct.unpack("<B", r.take(1))
        if tag not in _TAG_DTYPES:
            raise VersionMismatchError(f"unknown dtype tag {tag}")
        dtype = _TAG_DTYPES[tag]
        entries.append(ManifestEntry(name=name, shape=tuple(shape), dtype=dtype, offset=offset))
        offset += int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    tensors = {}
    for e in entries:
        n_items = int(np.prod(e.shape, dtype=np.int64))
        raw = r.take(n_items * e.dtype.itemsize)
        tensors[e.name] = np.frombuffer(raw, dtype=e.dtype).reshape(e.shape).copy()
    if len(data) - r.pos != 4:
        raise TruncationError("payload length does not match the manifest")
    (stored_crc,) = struct.unpack("<I", r.take(4))
    actual = zlib.crc32(data[:-4])
    if stored_crc != actual:
        raise ChecksumError(f"crc mismatch: stored {stored_crc:#010x}, actual {actual:#010x}")
    return Checkpoint(tensors=tensors, meta=meta, manifest=entries)


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def save_world_model(path, model, meta: dict, extra_tensors: dict[str, np.ndarray] | None = None) -> Path:
    """Serialize a WorldModel's parameters (plus optional optimizer tensors)."""
    tensors = {name: value.detach().cpu().numpy() for name, value in model.state_dict().items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    meta = dict(meta)
    meta.setdefault("model_config", model.cfg.to_dict())
    return save_checkpoint(path, tensors, meta)


def load_world_model(path):
    """Rebuild a WorldModel from a checkpoint; returns (model, checkpoint)."""
    from ..model import ModelConfig, WorldModel

    ckpt = load_checkpoint(path)
    cfg = ModelConfig.from_dict(ckpt.meta["model_config"])
    model = WorldModel(cfg)
    state = {
        name: torch.from_numpy(arr)
        for name, arr in ckpt.tensors.items()
        if "#" not in name
    }
    model.load_state_dict(state)
    model.eval()
    return model, ckpt
