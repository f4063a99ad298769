"""Binary checkpoint format for gaussian scenes and optimizer state.

Layout (all little-endian):

    magic    4 bytes  "ICEG"
    version  u32
    stage    u16 length + utf-8 bytes
    iter     u64
    n_fields u32
    field *  u16 name length + utf-8 name, u64 value count, count * f32
    crc32    u32 over every preceding byte

Float32 blocks round-trip bit-exactly, which the resume-equivalence
guarantee relies on. Optimizer moments ride along as extra fields under an
``opt/`` prefix.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError
from .gaussians import PARAM_NAMES, GaussianSet

MAGIC = b"ICEG"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for checkpoint header")
    return struct.pack("<H", len(raw)) + raw


def serialize_blocks(stage: str, iteration: int, blocks: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(stage), struct.pack("<Q", iteration)]
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        parts.append(_pack_str(name))
        parts.append(struct.pack("<Q", flat.size))
        parts.append(flat.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def deserialize_blocks(blob: bytes, source: str = "checkpoint") -> tuple[str, int, dict[str, np.ndarray]]:
    if len(blob) < 18 or blob[:4] != MAGIC:
        raise IntegrityError(f"{source}: not a checkpoint file")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{source}: checksum mismatch")
    try:
        offset = 4
        (version,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if version != VERSION:
            raise IntegrityError(f"{source}: unsupported version {version}")
        (stage_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        stage = blob[offset : offset + stage_len].decode("utf-8")
        offset += stage_len
        (iteration,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        (n_fields,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        blocks: dict[str, np.ndarray] = {}
        for _ in range(n_fields):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (count,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            end = offset + 4 * count
            if end > len(blob) - 4:
                raise IntegrityError(f"{source}: truncated field '{name}'")
            blocks[name] = np.frombuffer(blob[offset:end], dtype="<f4").copy()
            offset = end
    except struct.error as e:
        raise IntegrityError(f"{source}: malformed checkpoint ({e})") from e
    return stage, int(iteration), blocks


def save_checkpoint(
    checkpoint_dir,
    gaussians: GaussianSet,
    stage: str,
    iteration: int,
    extra_blocks: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write ``{stage}_{iteration:07d}.ckpt``; returns the path."""
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    blocks = gaussians.numpy_blocks()
    for name, arr in (extra_blocks or {}).items():
        blocks[f"opt/{name}"] = np.asarray(arr, dtype=np.float32)
    path = checkpoint_dir / f"{stage}_{iteration:07d}.ckpt"
    tmp = path.with_suffix(".ckpt.tmp")
    tmp.write_bytes(serialize_blocks(stage, iteration, blocks))
    tmp.replace(path)
    return path


def load_checkpoint_full(path) -> tuple[GaussianSet, str, int, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise IntegrityError(f"{path}: checkpoint does not exist") from None
    stage, iteration, blocks = deserialize_blocks(blob, source=str(path))
    params = {name: blocks[name] for name in PARAM_NAMES if name in blocks}
    if len(params) != len(PARAM_NAMES):
        missing = set(PARAM_NAMES) - set(params)
        raise IntegrityError(f"{path}: missing parameter blocks {sorted(missing)}")
    gaussians = GaussianSet.from_numpy_blocks(params)
    extras = {name[4:]: arr for name, arr in blocks.items() if name.startswith("opt/")}
    return gaussians, stage, iteration, extras


def load_checkpoint(path) -> tuple[GaussianSet, str, int]:
    gaussians, stage, iteration, _ = load_checkpoint_full(path)
    return gaussians, stage, iteration
