"""Named-tensor binary checkpoints.

Wire format: 8-byte magic "ADMMCKPT", uint32-LE version (=1), uint32-LE
tensor count; per tensor a uint16-LE name length, the UTF-8 name, a uint8
rank, rank uint32-LE dims, then raw float32-LE values row-major; finally
a uint32-LE CRC32 of all preceding bytes. Writes are atomic
(write-then-rename), so a failed save leaves no file at the target path.

Run metadata (arch, seed, phase, iteration counters) rides inside the
same format as a reserved rank-1 tensor named "__meta_json__" whose
values are the bytes of a UTF-8 JSON document; byte values 0..255 are
exactly representable in float32, so metadata round-trips losslessly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .exceptions import FormatError, InputError
from .model import Model, build_model

MAGIC = b"ADMMCKPT"
VERSION = 1
META_TENSOR = "__meta_json__"


@dataclass
class Checkpoint:
    """Ordered named tensors plus a small JSON-able metadata dict."""

    tensors: Dict[str, np.ndarray]
    meta: Dict[str, object] = field(default_factory=dict)


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise InputError(f"tensor name too long: {len(name_bytes)} bytes")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 0xFF:
        raise InputError(f"tensor {name!r} has unsupported rank {arr.ndim}")
    parts = [struct.pack("<H", len(name_bytes)), name_bytes,
             struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Serialize atomically; partial writes never land at `path`."""
    tensors = dict(checkpoint.tensors)
    if META_TENSOR in tensors:
        raise InputError(f"{META_TENSOR} is reserved for metadata")
    meta_bytes = json.dumps(checkpoint.meta, sort_keys=True).encode("utf-8")
    tensors[META_TENSOR] = np.frombuffer(meta_bytes, dtype=np.uint8).astype(np.float32)

    body = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        body.append(_encode_tensor(name, arr))
    blob = b"".join(body)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    """Parse and CRC-verify a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12:
        raise FormatError(f"{path}: too short ({len(blob)} bytes) to be a checkpoint")
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r} at byte 0")
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"{path}: CRC mismatch (stored 0x{stored_crc:08x}, "
            f"computed 0x{actual_crc:08x})")
    version = struct.unpack_from("<I", blob, 8)[0]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 8")
    count = struct.unpack_from("<I", blob, 12)[0]

    offset = 16
    end = len(blob) - 4
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > end:
            raise FormatError(f"{path}: truncated tensor header at byte {offset}")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 1 > end:
            raise FormatError(f"{path}: truncated rank field at byte {offset}")
        rank = blob[offset]
        offset += 1
        if offset + 4 * rank > end:
            raise FormatError(f"{path}: truncated dims at byte {offset}")
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n_values = int(np.prod(dims, dtype=np.int64))
        nbytes = 4 * n_values
        if offset + nbytes > end:
            raise FormatError(f"{path}: truncated tensor data at byte {offset}")
        arr = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset)
        tensors[name] = arr.reshape(dims).copy()
        offset += nbytes
    if offset != end:
        raise FormatError(f"{path}: {end - offset} trailing bytes at byte {offset}")

    meta: Dict[str, object] = {}
    if META_TENSOR in tensors:
        raw = tensors.pop(META_TENSOR)
        meta = json.loads(raw.astype(np.uint8).tobytes().decode("utf-8"))
    return Checkpoint(tensors=tensors, meta=meta)


def checkpoint_from_model(model: Model, phase: str, seed: int,
                          extra_tensors: Optional[Dict[str, np.ndarray]] = None,
                          extra_meta: Optional[Dict[str, object]] = None) -> Checkpoint:
    """Snapshot all parameters (copies) plus metadata."""
    tensors = {name: param.copy() for name, param in model.parameters()}
    if extra_tensors:
        tensors.update({name: arr.copy() for name, arr in extra_tensors.items()})
    meta = {"arch": model.arch, "phase": phase, "seed": seed}
    if extra_meta:
        meta.update(extra_meta)
    return Checkpoint(tensors=tensors, meta=meta)


def model_from_checkpoint(checkpoint: Checkpoint) -> Model:
    """Rebuild the architecture and load its parameters from a checkpoint.

    Tensor names outside the model's parameters (other than mask/* and
    admm/* extras) are rejected.
    """
    arch = checkpoint.meta.get("arch")
    if arch is None:
        raise FormatError("checkpoint has no 'arch' metadata")
    model = build_model(arch, seed=int(checkpoint.meta.get("seed", 0)))
    expected = dict(model.parameters())
    for name, arr in checkpoint.tensors.items():
        if name.startswith(("mask/", "admm/")):
            continue
        if name not in expected:
            raise FormatError(f"unknown tensor name {name!r} for arch {arch}")
        if arr.shape != expected[name].shape:
            raise FormatError(
                f"tensor {name!r} shape {arr.shape} != expected "
                f"{expected[name].shape}")
        expected[name][...] = arr
    missing = set(expected) - set(checkpoint.tensors)
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")
    return model


def mask_from_checkpoint(checkpoint: Checkpoint) -> Dict[str, np.ndarray]:
    """Extract mask/<layer> tensors, keyed by layer name."""
    return {name[len("mask/"):]: arr for name, arr in checkpoint.tensors.items()
            if name.startswith("mask/")}
