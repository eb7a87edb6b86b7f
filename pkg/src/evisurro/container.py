"""Self-describing binary container for model artifacts.

Layout (all integers little-endian):

    magic     8 bytes  b"EVISURRO"
    version   1 byte   b"1"
    n_sections  uint32
    per section:
        name_len  uint32
        name      utf-8 bytes
        dtype     uint8 (0 = float64, 1 = int64, 2 = float32)
        ndim      uint32
        shape     ndim * int64
        data      raw little-endian array bytes, row-major

A human-readable sidecar manifest (<path>.manifest.txt) lists the
sections; the loader reads only the binary file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = [
    "ContainerError",
    "ContainerVersionError",
    "ContainerCorruptError",
    "write_container",
    "read_container",
    "manifest_path",
]

_MAGIC = b"EVISURRO"
_VERSION = b"1"

_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<i8"): 1,
    np.dtype("<f4"): 2,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ContainerError(Exception):
    """Base error for container I/O."""


class ContainerVersionError(ContainerError):
    """The file is a container, but from an unsupported format version."""


class ContainerCorruptError(ContainerError):
    """The file is truncated or not a container at all."""


def manifest_path(path):
    return Path(str(path) + ".manifest.txt")


def write_container(path, sections):
    """Write named arrays to ``path`` in section order.

    ``sections`` maps name -> ndarray; insertion order is preserved so
    identical inputs produce identical bytes.
    """
    path = Path(path)
    chunks = [_MAGIC, _VERSION, struct.pack("<I", len(sections))]
    manifest_lines = [
        f"container = {_MAGIC.decode()}{_VERSION.decode()}",
        f"sections = {len(sections)}",
    ]
    for name, arr in sections.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64:
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype == np.int64:
            arr = arr.astype("<i8", copy=False)
        elif arr.dtype == np.float32:
            arr = arr.astype("<f4", copy=False)
        else:
            raise ContainerError(
                f"section {name!r}: unsupported dtype {arr.dtype}"
            )
        code = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
        manifest_lines.append(
            f"{name} dtype={arr.dtype.name} shape={'x'.join(map(str, arr.shape))}"
        )
    path.write_bytes(b"".join(chunks))
    manifest_path(path).write_text("\n".join(manifest_lines) + "\n")


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise ContainerCorruptError(
                f"{self.path}: truncated while reading {what}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def read_container(path):
    """Read a container back as an ordered dict of name -> ndarray."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic = reader.take(len(_MAGIC), "magic")
    if magic != _MAGIC:
        raise ContainerCorruptError(f"{path}: not an {_MAGIC.decode()} container")
    version = reader.take(1, "version")
    if version != _VERSION:
        raise ContainerVersionError(
            f"{path}: container version {version!r} unsupported"
            f" (expected {_VERSION!r})"
        )
    (n_sections,) = struct.unpack("<I", reader.take(4, "section count"))
    sections = {}
    for i in range(n_sections):
        (name_len,) = struct.unpack("<I", reader.take(4, f"section {i} name length"))
        name = reader.take(name_len, f"section {i} name").decode("utf-8")
        code, ndim = struct.unpack("<BI", reader.take(5, f"{name} header"))
        if code not in _CODE_DTYPES:
            raise ContainerCorruptError(f"{path}: section {name}: bad dtype code {code}")
        shape = struct.unpack(f"<{ndim}q", reader.take(8 * ndim, f"{name} shape"))
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        data = reader.take(count * dtype.itemsize, f"{name} data")
        sections[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise ContainerCorruptError(f"{path}: trailing bytes after last section")
    return sections
