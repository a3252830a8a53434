"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SCVQ"  u32 version=1  u32 record_count
    per record:
        u16 name_len, name (UTF-8)
        u8 dtype (0=f32, 1=f64), u8 rank, rank x u32 dims
        payload, row-major little-endian
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCVQ"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


class UnknownDtypeError(CheckpointError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise UnknownDtypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"record name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise CheckpointError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def save(path, tensors) -> str:
    """Write named tensors; returns the SHA-256 of the file contents.

    ``tensors`` is a mapping or a sequence of (name, array) pairs; names must
    be unique.
    """
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateNameError(f"duplicate record names: {dup}")
    blob = encode_checkpoint(dict(items))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(
                f"truncated payload: need {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    r.pos = 4
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"record name is not UTF-8 at offset {r.pos}") from exc
        code, rank = struct.unpack("<BB", r.take(2, f"{name} dtype/rank"))
        if code not in _DTYPES:
            raise UnknownDtypeError(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} dims"))
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        payload = r.take(nbytes, f"{name} payload")
        if name in out:
            raise DuplicateNameError(f"duplicate record name {name!r}")
        arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last record")
    return out


def load(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- config records ------------------------------------------------------

def config_records(prefix: str, cfg: dict) -> dict[str, np.ndarray]:
    """Numeric/bool config fields as rank-0 f64 records under ``config/<prefix>/``."""
    recs = {}
    for key, val in cfg.items():
        if isinstance(val, (bool, int, float, np.integer, np.floating)):
            recs[f"config/{prefix}/{key}"] = np.asarray(float(val))
    return recs


def read_config(prefix: str, tensors: dict) -> dict[str, float]:
    head = f"config/{prefix}/"
    return {k[len(head):]: float(v) for k, v in tensors.items() if k.startswith(head)}


def subset(prefix: str, tensors: dict) -> dict[str, np.ndarray]:
    """Records under ``prefix/`` with the prefix stripped."""
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
