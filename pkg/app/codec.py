"""
Self-describing binary container shared by the dataset (TLDS) and checkpoint
(TLNT) files.

Layout:
    magic        4 bytes
    version      u16
    sections     repeated: u64 byte length, payload

Payload helpers encode JSON, string tables and numpy arrays. All integers and
floats are little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from app.errors import FormatError

_DTYPES: dict[bytes, str] = {b"f": "<f8", b"i": "<i8", b"b": "|u1"}


def _dtype_code(arr: np.ndarray) -> bytes:
    if arr.dtype == np.bool_:
        return b"b"
    if np.issubdtype(arr.dtype, np.integer):
        return b"i"
    if np.issubdtype(arr.dtype, np.floating):
        return b"f"
    raise TypeError(f"Unsupported array dtype {arr.dtype}")


def pack_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    header = code + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def unpack_array(payload: bytes) -> np.ndarray:
    if len(payload) < 2:
        raise FormatError("Truncated array header")
    code, ndim = payload[:1], payload[1]
    if code not in _DTYPES:
        raise FormatError(f"Unknown array dtype code {code!r}")
    offset = 2 + 8 * ndim
    if len(payload) < offset:
        raise FormatError("Truncated array shape")
    shape = struct.unpack(f"<{ndim}Q", payload[2:offset])
    dtype = np.dtype(_DTYPES[code])
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) - offset != expected:
        raise FormatError(f"Array payload holds {len(payload) - offset} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype, offset=offset).reshape(shape)
    if code == b"b":
        return arr.astype(bool)
    return arr.astype(np.float64 if code == b"f" else np.int64)


def pack_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def unpack_json(payload: bytes) -> Any:
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"Corrupt JSON section: {exc}") from exc


def pack_strings(values: list[str]) -> bytes:
    out = bytearray(struct.pack("<Q", len(values)))
    for value in values:
        raw = value.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


def unpack_strings(payload: bytes) -> list[str]:
    if len(payload) < 8:
        raise FormatError("Truncated string table")
    (count,) = struct.unpack_from("<Q", payload, 0)
    pos, values = 8, []
    for _ in range(count):
        if pos + 4 > len(payload):
            raise FormatError("Truncated string table")
        (size,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if pos + size > len(payload):
            raise FormatError("Truncated string table")
        try:
            values.append(payload[pos:pos + size].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"String table entry {len(values)} is not UTF-8: {exc}") from exc
        pos += size
    if pos != len(payload):
        raise FormatError("Trailing bytes in string table")
    return values


class ContainerWriter:
    def __init__(self, magic: bytes, version: int) -> None:
        self._buf = bytearray(magic + struct.pack("<H", version))

    def section(self, payload: bytes) -> ContainerWriter:
        self._buf += struct.pack("<Q", len(payload)) + payload
        return self

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def save(self, path: str | Path) -> Path:
        """Write via a temporary file so a crash never leaves a half-written artifact."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.getvalue())
        os.replace(tmp, path)
        return path


class ContainerReader:
    def __init__(self, data: bytes, magic: bytes, version: int, what: str) -> None:
        self._what = what
        if len(data) < len(magic) + 2:
            raise FormatError(f"{what}: file too short ({len(data)} bytes)")
        if data[: len(magic)] != magic:
            raise FormatError(f"{what}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
        (found,) = struct.unpack_from("<H", data, len(magic))
        if found != version:
            raise FormatError(f"{what}: unsupported format version {found}, expected {version}")
        self._data = data
        self._pos = len(magic) + 2

    @classmethod
    def open(cls, path: str | Path, magic: bytes, version: int, what: str) -> ContainerReader:
        return cls(Path(path).read_bytes(), magic, version, what)

    def section(self) -> bytes:
        if self._pos + 8 > len(self._data):
            raise FormatError(f"{self._what}: truncated (missing section header)")
        (size,) = struct.unpack_from("<Q", self._data, self._pos)
        start = self._pos + 8
        if start + size > len(self._data):
            raise FormatError(f"{self._what}: truncated (section needs {size} bytes)")
        self._pos = start + size
        return self._data[start:self._pos]

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise FormatError(f"{self._what}: {len(self._data) - self._pos} trailing bytes")
