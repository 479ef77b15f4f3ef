"""Workdir artifacts: pair archives, sidecar JSON, hash guards.

The pair archive is the same style of container as the model file: JSON
header, raw little-endian float64 buffers, trailing CRC32. Writing it is
fully deterministic, which the reproducibility contract relies on.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, CorruptFileError, VersionMismatchError
from .pipeline import WindowPair

_MAGIC = b"SMGP"
_FORMAT_VERSION = 1


def save_pairs(
    path: str | Path,
    pairs: Sequence[WindowPair],
    meta: dict[str, Any] | None = None,
) -> None:
    if not pairs:
        raise ValueError("refusing to write an empty pair archive")
    l_in, f_in = pairs[0].input.shape
    h, n_targets = pairs[0].target.shape
    header = {
        "meta": meta or {},
        "pairs": len(pairs),
        "l_in": l_in,
        "f_in": f_in,
        "h": h,
        "n_targets": n_targets,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    inputs = np.stack([p.input for p in pairs]).astype("<f8")
    targets = np.stack([p.target for p in pairs]).astype("<f8")
    starts = np.array([p.start for p in pairs], dtype="<i8")
    chunk_ids = np.array([p.chunk_id for p in pairs], dtype="<i8")

    body = bytearray()
    body += _MAGIC
    body += struct.pack("<HI", _FORMAT_VERSION, len(header_bytes))
    body += header_bytes
    body += inputs.tobytes()
    body += targets.tobytes()
    body += starts.tobytes()
    body += chunk_ids.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_pairs(path: str | Path) -> tuple[list[WindowPair], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: not a pair archive")
    (checksum,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != checksum:
        raise CorruptFileError(f"{path}: checksum mismatch")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != _FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}")
    header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    p, l_in, f_in = header["pairs"], header["l_in"], header["f_in"]
    h, n_targets = header["h"], header["n_targets"]

    offset = 10 + header_len
    inputs = np.frombuffer(raw, dtype="<f8", count=p * l_in * f_in, offset=offset)
    offset += inputs.nbytes
    targets = np.frombuffer(raw, dtype="<f8", count=p * h * n_targets, offset=offset)
    offset += targets.nbytes
    starts = np.frombuffer(raw, dtype="<i8", count=p, offset=offset)
    offset += starts.nbytes
    chunk_ids = np.frombuffer(raw, dtype="<i8", count=p, offset=offset)

    # frombuffer views are read-only; pairs must carry normal writable arrays
    inputs = inputs.reshape(p, l_in, f_in).copy()
    targets = targets.reshape(p, h, n_targets).copy()
    pairs = [
        WindowPair(
            input=inputs[i],
            target=targets[i],
            start=int(starts[i]),
            chunk_id=int(chunk_ids[i]),
        )
        for i in range(p)
    ]
    return pairs, header["meta"]


def write_json(path: str | Path, payload: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")


def read_json(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def check_hash(expected: str, found: str | None, what: str, force: bool = False) -> None:
    """Refuse artifacts produced under a different configuration."""
    if force or found is None:
        return
    if expected != found:
        raise ConfigError(
            f"{what} was produced by config {found}, current config is {expected}; "
            "rerun upstream commands or pass --force"
        )
