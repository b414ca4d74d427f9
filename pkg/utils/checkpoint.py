"""Versioned binary container for named parameter stores.

Layout (all integers little-endian)::

    magic          8 bytes   b"SMXCKPT\\0"
    version        u16       FORMAT_VERSION
    arch tag       u16 len + UTF-8 bytes
    shape header   u8 ndim + ndim x u32
    metadata       u32 len + UTF-8 JSON object
    block count    u32
    blocks         repeated:
                     u16 name len + UTF-8 name
                     u8  dtype tag (1=float32, 2=float64, 3=int64)
                     u8  ndim + ndim x u32 dims
                     raw little-endian values, C order

See ``artifacts/checkpoint_format.md`` for the field-by-field description.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import FormatError, TRUNCATED_FILE

MAGIC = b"SMXCKPT\x00"
FORMAT_VERSION = 1

_DTYPE_TAGS: dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
}
_TAG_BY_KIND = {("f", 4): 1, ("f", 8): 2, ("i", 8): 3}


@dataclass(frozen=True)
class Checkpoint:
    architecture: str
    shape: tuple[int, ...]
    parameters: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)


def _dtype_tag(array: np.ndarray) -> int:
    tag = _TAG_BY_KIND.get((array.dtype.kind, array.dtype.itemsize))
    if tag is None:
        raise FormatError(f"Unsupported parameter dtype {array.dtype}")
    return tag


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<H", FORMAT_VERSION)
    arch = checkpoint.architecture.encode("utf-8")
    out += struct.pack("<H", len(arch)) + arch
    out += struct.pack("<B", len(checkpoint.shape))
    out += struct.pack(f"<{len(checkpoint.shape)}I", *checkpoint.shape)
    meta = json.dumps(checkpoint.metadata, sort_keys=True, default=str).encode("utf-8")
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<I", len(checkpoint.parameters))
    for name in sorted(checkpoint.parameters):
        array = np.asarray(checkpoint.parameters[name])
        tag = _dtype_tag(array)
        encoded_name = name.encode("utf-8")
        out += struct.pack("<H", len(encoded_name)) + encoded_name
        out += struct.pack("<BB", tag, array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += np.ascontiguousarray(array, dtype=_DTYPE_TAGS[tag]).tobytes(order="C")
    return bytes(out)


class _Reader:
    def __init__(self, payload: bytes):
        self._view = memoryview(payload)
        self._pos = 0

    def take(self, n: int) -> memoryview:
        if self._pos + n > len(self._view):
            raise FormatError(f"Checkpoint {TRUNCATED_FILE} at byte {self._pos}")
        chunk = self._view[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._view)


def decode_checkpoint(payload: bytes) -> Checkpoint:
    """Parse a checkpoint container.

    Raises
    ------
    FormatError
        On bad magic, unknown version, unknown dtype tag, truncation or trailing bytes.
    """
    reader = _Reader(payload)
    if bytes(reader.take(len(MAGIC))) != MAGIC:
        raise FormatError("Not a synthmix checkpoint (magic mismatch)")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}; expected {FORMAT_VERSION}")
    (arch_len,) = reader.unpack("<H")
    try:
        architecture = bytes(reader.take(arch_len)).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = tuple(reader.unpack(f"<{ndim}I")) if ndim else ()
        (meta_len,) = reader.unpack("<I")
        metadata = json.loads(bytes(reader.take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Corrupt checkpoint header: {e}") from e
    (count,) = reader.unpack("<I")
    parameters: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = bytes(reader.take(name_len)).decode("utf-8", errors="strict")
        tag, block_ndim = reader.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"Unknown dtype tag {tag} for block {name!r}")
        dims = tuple(reader.unpack(f"<{block_ndim}I")) if block_ndim else ()
        dtype = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        values = np.frombuffer(bytes(reader.take(nbytes)), dtype=dtype).reshape(dims)
        parameters[name] = values.astype(dtype.newbyteorder("="), copy=True)
    if not reader.exhausted:
        raise FormatError("Trailing bytes after the last parameter block")
    return Checkpoint(architecture=architecture, shape=shape, parameters=parameters, metadata=metadata)


def parameter_digest(parameters: dict[str, np.ndarray]) -> str:
    """SHA-256 over the parameter blocks only; metadata such as wall time is ignored."""
    digest = hashlib.sha256()
    for name in sorted(parameters):
        array = np.asarray(parameters[name])
        tag = _dtype_tag(array)
        digest.update(f"{name}|{tag}|{array.shape}|".encode("utf-8"))
        digest.update(np.ascontiguousarray(array, dtype=_DTYPE_TAGS[tag]).tobytes(order="C"))
    return digest.hexdigest()


__all__ = ["Checkpoint", "encode_checkpoint", "decode_checkpoint", "parameter_digest", "MAGIC", "FORMAT_VERSION"]
