"""Bit-exact episode serialization.

Little-endian layout:

    magic   "MWEP" (4 bytes)
    version u32 = 1
    header  grid_size, K, C, I, cell_pixels, D_act, num_landmarks (u32 each),
            success_flag (u8), seed (u64)
    cameras C x (x0, y0, w, h, rotation; u32 each)
    palette (K + num_landmarks) RGB u8 triples
    frames  raw RGB u8, view-major then frame-major
    actions f32, frame-major, agent-major, slot-major
    states  I x (tick u32, then agent and landmark (x, y) u32 pairs);
            the whole section is omitted for generated episodes that carry
            no ground truth, which the reader detects from the byte length
    crc32   u32 over all preceding bytes

Agent controller types are not stored: they are recoverable from the action
layout itself (a type-A agent always has a one-hot in slots 0..4; a type-B
agent has those slots identically zero).

The writer is canonical: writing a just-read well-formed file reproduces its
bytes exactly.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, ChecksumError, TruncationError, VersionMismatchError
from ..worldsim import CameraSpec, WorldConfig, WorldState
from .actions import ACTION_WIDTH, ActionTensor, AgentType
from .episodes import Episode

MAGIC = b"MWEP"
VERSION = 1

_HEADER = struct.Struct("<7I B Q")
_CAMERA = struct.Struct("<5I")


def _infer_agent_types(values: np.ndarray) -> tuple[AgentType, ...]:
    types = []
    for k in range(values.shape[1]):
        has_onehot = bool(np.any(values[:, k, :5]))
        types.append(AgentType.A if has_onehot else AgentType.B)
    return tuple(types)


def episode_to_bytes(ep: Episode) -> bytes:
    cfg = ep.world_config
    if ep.actions.values.shape[2] != ACTION_WIDTH:
        raise ValueError(f"unsupported action width {ep.actions.values.shape[2]}")
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(
        _HEADER.pack(
            cfg.grid_size,
            cfg.num_agents,
            cfg.num_views,
            ep.num_frames,
            cfg.cell_pixels,
            ACTION_WIDTH,
            cfg.num_landmarks,
            1 if ep.success_flag else 0,
            ep.seed & 0xFFFFFFFFFFFFFFFF,
        )
    )
    for cam in cfg.cameras:
        parts.append(
            _CAMERA.pack(
                cam.crop_origin[0], cam.crop_origin[1], cam.crop_size[0], cam.crop_size[1], cam.rotation
            )
        )
    parts.append(bytes(v for color in cfg.palette for v in color))
    for view in ep.frames:
        parts.append(np.ascontiguousarray(view, dtype=np.uint8).tobytes())
    parts.append(np.ascontiguousarray(ep.actions.values, dtype="<f4").tobytes())
    if ep.states is not None:
        for s in ep.states:
            parts.append(struct.pack("<I", s.tick))
            for x, y in s.entity_positions():
                parts.append(struct.pack("<2I", x, y))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def write_episode(ep: Episode, path) -> Path:
    path = Path(path)
    path.write_bytes(episode_to_bytes(ep))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"file truncated: needed {self.pos + n} bytes, have {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def episode_from_bytes(data: bytes) -> Episode:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    grid, k, c, i, cp, d_act, n_land, success, seed = _HEADER.unpack(r.take(_HEADER.size))
    if d_act != ACTION_WIDTH:
        raise VersionMismatchError(f"unsupported action width {d_act}")
    cameras = []
    for _ in range(c):
        x0, y0, w, h, rot = _CAMERA.unpack(r.take(_CAMERA.size))
        cameras.append(CameraSpec(crop_origin=(x0, y0), crop_size=(w, h), rotation=rot))
    n_ent = k + n_land
    pal_raw = r.take(3 * n_ent)
    palette = tuple(tuple(pal_raw[3 * e : 3 * e + 3]) for e in range(n_ent))
    config = WorldConfig(
        grid_size=grid,
        num_agents=k,
        num_landmarks=n_land,
        cameras=tuple(cameras),
        cell_pixels=cp,
        palette=palette,
    )
    frames = []
    for cam in cameras:
        hh, ww = cam.image_shape(cp)
        raw = r.take(i * hh * ww * 3)
        frames.append(np.frombuffer(raw, dtype=np.uint8).reshape(i, hh, ww, 3).copy())
    act_raw = r.take(i * k * d_act * 4)
    values = np.frombuffer(act_raw, dtype="<f4").reshape(i, k, d_act).copy()
    actions = ActionTensor(values, _infer_agent_types(values))

    state_rec = 4 + 8 * n_ent
    remaining = len(data) - r.pos
    if remaining == 4 + i * state_rec:
        states = []
        for _ in range(i):
            (tick,) = struct.unpack("<I", r.take(4))
            coords = struct.unpack(f"<{2 * n_ent}I", r.take(8 * n_ent))
            pairs = [(coords[2 * e], coords[2 * e + 1]) for e in range(n_ent)]
            states.append(
                WorldState(
                    agent_positions=tuple(pairs[:k]),
                    landmark_positions=tuple(pairs[k:]),
                    tick=tick,
                )
            )
        states = tuple(states)
    elif remaining == 4:
        states = None
    else:
        raise TruncationError(
            f"unexpected trailing length {remaining}; file truncated or corrupt"
        )
    (stored_crc,) = struct.unpack("<I", r.take(4))
    actual_crc = zlib.crc32(data[: len(data) - 4])
    if stored_crc != actual_crc:
        raise ChecksumError(f"crc mismatch: stored {stored_crc:#010x}, actual {actual_crc:#010x}")
    return Episode(
        world_config=config,
        frames=tuple(frames),
        actions=actions,
        states=states,
        seed=seed,
        success_flag=bool(success),
    )


def read_episode(path) -> Episode:
    data = Path(path).read_bytes()
    return episode_from_bytes(data)
