"""Binary checkpoint format.

Layout (all integers little-endian):

  magic     8 bytes  b"TTTCKPT\\x01"
  version   u32      format version (currently 1)
  digest    32 bytes sha256 of the embedded config JSON
  cfg_len   u64      length of the config JSON in bytes
  config    cfg_len  canonical JSON (sorted keys, compact separators)
  step      u64      training step the snapshot was taken at
  n_tensors u32
  tensor*   name_len u16, name utf-8, dtype u8 (0=f32, 1=f64),
            ndim u8, dims u64 each, raw C-order little-endian payload

Canonical JSON plus sorted tensor order makes save -> load -> save an
identity on bytes. The digest pins the config region so a foreign or
corrupted header is rejected before any tensor is trusted.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import CheckpointError

MAGIC = b"TTTCKPT\x01"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def canonical_config_bytes(config: Mapping) -> bytes:
    return json.dumps(config, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def checkpoint_save(path: str, config: Mapping, step: int,
                    tensors: Mapping[str, np.ndarray]) -> None:
    cfg_bytes = canonical_config_bytes(config)
    parts = [MAGIC, struct.pack("<I", VERSION),
             hashlib.sha256(cfg_bytes).digest(),
             struct.pack("<Q", len(cfg_bytes)), cfg_bytes,
             struct.pack("<Q", int(step)),
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        # ascontiguousarray would promote rank-0 to rank-1; keep the shape
        arr = np.asarray(tensors[name])
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            code = 0
        elif arr.dtype == np.float64:
            code = 1
        else:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype "
                                  f"{arr.dtype}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_DTYPES[code], copy=False).tobytes(order="C"))
    blob = b"".join(parts)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what} "
                                  f"(need {n} bytes at offset {self.off}, "
                                  f"have {len(self.blob) - self.off})")
        out = self.blob[self.off: self.off + n]
        self.off += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def checkpoint_load(path: str) -> Tuple[dict, int, Dict[str, np.ndarray]]:
    """(config, step, tensors). Rejects wrong magic/version, a config whose
    digest does not match, and truncated or trailing bytes."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint file not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} "
                              f"(expected {VERSION})")
    digest = r.take(32, "config digest")
    cfg_len = r.u("<Q", "config length")
    cfg_bytes = r.take(cfg_len, "config")
    if hashlib.sha256(cfg_bytes).digest() != digest:
        raise CheckpointError("config digest mismatch; checkpoint corrupted")
    try:
        config = json.loads(cfg_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"embedded config is not valid JSON: {e}") from e
    step = r.u("<Q", "step")
    n_tensors = r.u("<I", "tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for i in range(n_tensors):
        name_len = r.u("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        code = r.u("<B", f"tensor {name!r} dtype")
        if code not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype code {code}")
        ndim = r.u("<B", f"tensor {name!r} rank")
        shape = tuple(r.u("<Q", f"tensor {name!r} dim {d}")
                      for d in range(ndim))
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = r.take(count * dt.itemsize, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    if r.off != len(blob):
        raise CheckpointError(f"{len(blob) - r.off} trailing bytes after the "
                              f"last tensor")
    return config, step, tensors


def expect_shapes(tensors: Mapping[str, np.ndarray],
                  expected: Mapping[str, Tuple[int, ...]],
                  group: str = "param.") -> None:
    """Validate that every expected tensor exists under the group prefix
    with the right shape; errors name the offending tensor."""
    for name, shape in expected.items():
        key = group + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key!r}")
        got = tensors[key].shape
        if tuple(got) != tuple(shape):
            raise CheckpointError(f"tensor {key!r} has shape {tuple(got)}, "
                                  f"model expects {tuple(shape)}")
