"""Binary volume/mask files and parameter checkpoints.

Volume file (little-endian):

    magic "V3D1" | dtype code u8 (0 = u8 mask, 1 = f32 volume) | D, H, W u32 |
    spacing 3 x f32 | row-major payload

A multi-channel volume is stored as one file per channel; the tools here only
write single-channel volumes.

Checkpoint file (little-endian):

    magic "RSCK" | version u32 | tensor count u32 | per tensor:
    name length u16, name utf-8, origin length u8, origin utf-8, frozen u8,
    ndim u8, dims u32 each, float64 payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, InputError

VOLUME_MAGIC = b"V3D1"
HEADER = struct.Struct("<4sB3I3f")
DTYPE_CODES = {0: np.dtype("u1"), 1: np.dtype("<f4")}
MASK, VOLUME = 0, 1

CKPT_MAGIC = b"RSCK"
CKPT_VERSION = 1


@dataclass
class Vol3dFile:
    data: np.ndarray  # (D, H, W) uint8 or float32
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def is_mask(self) -> bool:
        return self.data.dtype == np.uint8


def _check_mask(arr: np.ndarray, where: str) -> None:
    bad = arr[(arr != 0) & (arr != 1)]
    if bad.size:
        raise InputError(f"{where}: mask payload must be binary, found value {int(bad[0])}")


def encode_volume(data, spacing=(1.0, 1.0, 1.0)) -> bytes:
    arr = np.asarray(data)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise InputError(f"volume must be (D, H, W), got shape {arr.shape}")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise InputError(f"spacing must be three positive reals, got {spacing}")
    if arr.dtype in (np.uint8, np.bool_):
        arr = arr.astype(np.uint8)
        _check_mask(arr, "write")
        code = MASK
    else:
        arr = arr.astype("<f4")
        code = VOLUME
    head = HEADER.pack(VOLUME_MAGIC, code, *arr.shape, *(float(s) for s in spacing))
    return head + np.ascontiguousarray(arr).tobytes()


def decode_volume(raw: bytes, where: str = "<bytes>") -> Vol3dFile:
    if len(raw) < 4 or raw[:4] != VOLUME_MAGIC:
        raise FormatError(f"{where}: bad magic {raw[:4]!r}, expected {VOLUME_MAGIC!r}")
    if len(raw) < HEADER.size:
        raise CorruptionError(f"{where}: header truncated: expected {HEADER.size} bytes, got {len(raw)}")
    _, code, D, H, W, sd, sh, sw = HEADER.unpack_from(raw)
    if code not in DTYPE_CODES:
        raise FormatError(f"{where}: unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    expected = D * H * W * dtype.itemsize
    actual = len(raw) - HEADER.size
    if actual != expected:
        raise CorruptionError(f"{where}: payload is {actual} bytes, expected {expected} for {D}x{H}x{W} {dtype}")
    arr = np.frombuffer(raw, dtype=dtype, offset=HEADER.size).reshape(D, H, W)
    if code == MASK:
        _check_mask(arr, where)
        arr = arr.astype(np.uint8)
    else:
        arr = arr.astype(np.float32)
    return Vol3dFile(arr, (sd, sh, sw))


def write_volume(path, data, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a float volume as f32 or a uint8/bool mask as u8."""
    Path(path).write_bytes(encode_volume(data, spacing))


def read_volume(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Return ``(array, spacing)``; masks come back as uint8, volumes as float32."""
    f = decode_volume(Path(path).read_bytes(), str(path))
    return f.data, f.spacing


# --------------------------------------------------------------------------- checkpoints
def encode_checkpoint(model) -> bytes:
    parts = []
    named = list(model.named_parameters())
    parts.append(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(named)))
    for name, p in named:
        nb = name.encode("utf-8")
        ob = p.origin.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", len(ob)) + ob)
        parts.append(struct.pack("<BB", int(p.frozen), p.data.ndim))
        parts.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, where: str):
        self.raw, self.pos, self.where = raw, 0, where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CorruptionError(
                f"{self.where}: truncated at byte {self.pos}: need {n} more, have {len(self.raw) - self.pos}"
            )
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(raw: bytes, where: str = "<bytes>") -> dict[str, tuple[np.ndarray, str, bool]]:
    """Map parameter name -> (float64 array, origin, frozen)."""
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{where}: bad checkpoint magic {raw[:4]!r}")
    r = _Reader(raw, where)
    r.take(4)
    version, count = r.unpack("<II")
    if version != CKPT_VERSION:
        raise FormatError(f"{where}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (olen,) = r.unpack("<B")
        origin = r.take(olen).decode("utf-8")
        frozen, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).copy()
        out[name] = (arr, origin, bool(frozen))
    if r.pos != len(raw):
        raise CorruptionError(f"{where}: {len(raw) - r.pos} trailing bytes after {count} tensors")
    return out


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(model, path) -> None:
    """Copy stored tensors into ``model``; names, shapes and tags must match exactly."""
    stored = decode_checkpoint(Path(path).read_bytes(), str(path))
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise FormatError(f"{path}: checkpoint does not match model (missing {missing[:5]}, unexpected {extra[:5]})")
    for name, (arr, origin, frozen) in stored.items():
        p = params[name]
        if arr.shape != p.data.shape:
            raise FormatError(f"{path}: {name} has shape {arr.shape}, model expects {p.data.shape}")
        if origin != p.origin or frozen != p.frozen:
            raise FormatError(f"{path}: {name} tagged {origin}/{frozen}, model has {p.origin}/{p.frozen}")
        p.data[...] = arr
