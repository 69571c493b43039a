"""Binary checkpoints: named float64 parameter arrays plus a JSON
config blob.

Layout (little-endian): magic "HCICKPT1", u32 version, u32 parameter
count; per parameter u32 name length, UTF-8 name, u32 rank, u32 dims,
float64 values; then a UTF-8 JSON object holding the configuration and
step counter, running to the end of the file. Save/load round trips are
bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

MAGIC = b"HCICKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    configs: dict
    step: int


def save_checkpoint(path: str, params: dict[str, np.ndarray], configs: dict, step: int = 0) -> None:
    blob = struct.pack("<8sII", MAGIC, FORMAT_VERSION, len(params))
    for name, value in params.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype=np.float64)
        ident = name.encode("utf-8")
        blob += struct.pack("<I", len(ident)) + ident
        blob += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8").tobytes()
    blob += json.dumps({"step": int(step), "configs": configs}, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as err:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataError(f"cannot write checkpoint {path}: {err}") from err


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err

    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(blob):
            raise DataError(f"{path}: unexpected end of file")
        out = blob[pos : pos + count]
        pos += count
        return out

    if take(8) != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
        rank = struct.unpack("<I", take(4))[0]
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
    try:
        meta = json.loads(blob[pos:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DataError(f"{path}: corrupt config blob: {err}") from err
    if not isinstance(meta, dict) or "configs" not in meta:
        raise DataError(f"{path}: config blob is missing required keys")
    return Checkpoint(params=params, configs=meta["configs"], step=int(meta.get("step", 0)))
