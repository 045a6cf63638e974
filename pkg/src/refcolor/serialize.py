"""Flat binary container for named tensors plus a text metadata block.

Layout (little-endian throughout):

    magic   8 bytes  b"RFCOLOR\\0"
    version u32
    meta    u32 length + UTF-8 "key=value" lines (newlines in values
            escaped as \\n)
    count   u32
    per tensor:
        name  u16 length + UTF-8
        dtype u8 length + ASCII numpy dtype string (e.g. "<f4")
        ndim  u8, then ndim * u32 dimensions
        raw   C-order data bytes

Writing then reading then writing again reproduces the file bitwise.
Checkpoints and perceptual-backbone weight files share this container.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFCOLOR\x00"
VERSION = 1


class ContainerError(ValueError):
    """Corrupt, truncated, or wrong-version container file."""


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(value: str) -> str:
    out = []
    it = iter(value)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append("\n" if nxt == "n" else nxt)
        else:
            out.append(ch)
    return "".join(out)


def write_container(path, meta: dict, tensors: dict) -> None:
    meta_text = "\n".join(f"{k}={_escape(str(v))}" for k, v in meta.items())
    meta_bytes = meta_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        parts.append(struct.pack("<H", len(name_b)) + name_b)
        parts.append(struct.pack("<B", len(dtype_b)) + dtype_b)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_container(path):
    """Return (version, meta dict, tensors dict) or raise ContainerError."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ContainerError(f"{path}: truncated container (needed {n} bytes at offset {pos})")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise ContainerError(f"{path}: bad magic; not a refcolor container")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version} (expected {VERSION})")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = {}
    meta_text = take(meta_len).decode("utf-8")
    for line in meta_text.splitlines():
        key, _, value = line.partition("=")
        meta[key] = _unescape(value)
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (dtype_len,) = struct.unpack("<B", take(1))
        dtype = np.dtype(take(dtype_len).decode("ascii"))
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dtype.itemsize
        data = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape)
        tensors[name] = data.copy()
    if pos != len(raw):
        raise ContainerError(f"{path}: {len(raw) - pos} trailing bytes after container")
    return version, meta, tensors
