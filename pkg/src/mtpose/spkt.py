"""Binary tensor containers.

Single tensor (``SPKT``), all integers little-endian::

    b"SPKT" | version u32 | rank u32 | extent u32 * rank | float64 payload (row-major)

Named-tensor checkpoint (``SPKC``)::

    b"SPKC" | version u32 | meta_len u32 | meta (UTF-8 ``key=value`` lines)
    | count u32 | manifest entries | payload

Each manifest entry is ``name_len u32 | name UTF-8 | rank u32 | extent u32 * rank |
offset u64`` where ``offset`` is the byte position of that tensor's SPKT record
relative to the start of the payload. The payload is the concatenation of the
SPKT records in manifest order.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

TENSOR_MAGIC = b"SPKT"
CHECKPOINT_MAGIC = b"SPKC"
VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def encode_tensor(array) -> bytes:
    a = np.array(array, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
    head = TENSOR_MAGIC + struct.pack(f"<II{a.ndim}I", VERSION, a.ndim, *a.shape)
    return head + a.tobytes()


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, 4, "magic") != TENSOR_MAGIC:
        raise FormatError("not an SPKT tensor record")
    version, rank = struct.unpack("<II", _read_exact(f, 8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported SPKT version {version}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "extents"))
    n = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(f, 8 * n, "payload"), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def _encode_meta(meta: Mapping[str, str]) -> bytes:
    lines = []
    for k, v in meta.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise FormatError(f"metadata entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def encode_checkpoint(tensors: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> bytes:
    meta_bytes = _encode_meta(meta or {})
    records = [encode_tensor(a) for a in tensors.values()]
    manifest = io.BytesIO()
    offset = 0
    for (name, arr), rec in zip(tensors.items(), records):
        nb = name.encode("utf-8")
        shape = np.shape(arr)
        manifest.write(struct.pack("<I", len(nb)) + nb)
        manifest.write(struct.pack(f"<I{len(shape)}IQ", len(shape), *shape, offset))
        offset += len(rec)
    head = CHECKPOINT_MAGIC + struct.pack("<II", VERSION, len(meta_bytes)) + meta_bytes
    head += struct.pack("<I", len(records))
    return head + manifest.getvalue() + b"".join(records)


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    f = io.BytesIO(buf)
    if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not an SPKC checkpoint")
    version, meta_len = struct.unpack("<II", _read_exact(f, 8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported SPKC version {version}")
    meta: dict[str, str] = {}
    text = _read_exact(f, meta_len, "metadata").decode("utf-8")
    for line in text.split("\n") if text else []:
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"bad metadata line {line!r}")
        meta[k] = v
    (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
        name = _read_exact(f, nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
        shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "extents"))
        (offset,) = struct.unpack("<Q", _read_exact(f, 8, "offset"))
        entries.append((name, shape, offset))
    base = f.tell()
    tensors: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        f.seek(base + offset)
        arr = read_tensor(f)
        if arr.shape != tuple(shape):
            raise FormatError(f"tensor {name!r}: manifest shape {shape} != record shape {arr.shape}")
        tensors[name] = arr
    return tensors, meta


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode_checkpoint(Path(path).read_bytes())
