"""Binary checkpoint format.

Layout, all little-endian::

    b"MDCK"  u32 version
    u64 length, UTF-8 JSON metadata
    5 x (u64 byte length, float32 array): params, ema, adam m, adam v, w
    u32 CRC32 of every preceding byte

``w`` is empty unless the run used a vector schedule. Arrays are stored as
float32, so a loaded checkpoint holds the float32-rounded values and saving it
again reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MDCK"
VERSION = 1
_ARRAYS = ("params", "ema", "opt_m", "opt_v", "w")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    schedule: dict
    arch: dict
    params: np.ndarray
    ema: np.ndarray
    opt_m: np.ndarray
    opt_v: np.ndarray
    opt_step: int = 0
    step: int = 0
    w: np.ndarray | None = None
    vocab: dict | None = None
    rng: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: int = VERSION

    def metadata(self) -> dict:
        return {"version": self.version, "schedule": self.schedule, "arch": self.arch,
                "vocab": self.vocab, "step": self.step, "opt_step": self.opt_step,
                "rng": self.rng, "config": self.config, "has_w": self.w is not None}


def _f32(a) -> bytes:
    a = np.asarray(a if a is not None else [], dtype="<f4").reshape(-1)
    return struct.pack("<Q", a.nbytes) + a.tobytes()


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", ckpt.version) + struct.pack("<Q", len(meta)) + meta
    body += b"".join(_f32(getattr(ckpt, name)) for name in _ARRAYS)
    return body + struct.pack("<I", zlib.crc32(body))


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 4:
        raise TruncatedError("file ends inside the magic number")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedError(f"file ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads {VERSION}")
    (meta_len,) = struct.unpack("<Q", take(8))
    meta_raw = take(meta_len)
    arrays = {}
    for name in _ARRAYS:
        (nbytes,) = struct.unpack("<Q", take(8))
        if nbytes % 4:
            raise ChecksumError(f"array {name} has a length that is not a multiple of 4")
        arrays[name] = np.frombuffer(take(nbytes), dtype="<f4").astype(np.float64)
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(data):
        raise ChecksumError(f"{len(data) - pos} unexpected trailing bytes")
    if zlib.crc32(data[: pos - 4]) != crc:
        raise ChecksumError("CRC32 mismatch")
    meta = json.loads(meta_raw.decode("utf-8"))
    return Checkpoint(
        schedule=meta["schedule"], arch=meta["arch"], params=arrays["params"], ema=arrays["ema"],
        opt_m=arrays["opt_m"], opt_v=arrays["opt_v"], opt_step=meta["opt_step"], step=meta["step"],
        w=arrays["w"] if meta["has_w"] else None, vocab=meta["vocab"], rng=meta["rng"],
        config=meta["config"], version=version,
    )


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
