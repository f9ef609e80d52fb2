"""Checkpoint (PGCK) and map set (PGMS) files.

Checkpoint: b"PGCK", u32 version, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims, float64 data.
Map set: b"PGMS", u32 version, u32 H, u32 W, then for tcl, tdo, tbo, tcc a
u32 channel count followed by H x W x C float32 data. Everything little-endian.
"""
import struct
from pathlib import Path
from typing import Dict, Iterable, Mapping, Tuple, Union

import numpy as np

from pgspot.core.errors import (
    BadMagicError,
    DataError,
    DuplicateTensorError,
    TruncatedFileError,
    VersionMismatchError,
)
from pgspot.models.maps import MapSet

PathLike = Union[str, Path]
CHECKPOINT_MAGIC = b"PGCK"
MAPSET_MAGIC = b"PGMS"
VERSION = 1
# on-disk block order keeps the channel counts ascending: 1, 2, 4, 37
FILE_BLOCKS = (("tcl", 1), ("tdo", 2), ("tbo", 4), ("tcc", 37))


class _Reader:
    def __init__(self, path: PathLike, data: bytes):
        self.path = path
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncatedFileError(f"{self.path}: truncated file at byte {len(self.data)}, needed {self.pos + size}")
        chunk = self.data[self.pos: self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape)

    def header(self, magic: bytes):
        found = self.data[:4]
        if found != magic:
            raise BadMagicError(self.path, found)
        self.take(4)
        version = self.u32()
        if version != VERSION:
            raise VersionMismatchError(f"{self.path}: file version {version}, this build reads version {VERSION}")

    def finish(self):
        if self.pos != len(self.data):
            raise DataError(f"{self.path}: {len(self.data) - self.pos} unexpected trailing bytes")


def _read(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read file - {e}")


def save_checkpoint(path: PathLike, tensors: Union[Mapping[str, np.ndarray], Iterable[Tuple[str, np.ndarray]]]):
    """Write named tensors; a name given twice is rejected before anything is written."""
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    seen = set()
    for name, _ in items:
        if name in seen:
            raise DuplicateTensorError(f"duplicate tensor name '{name}' in checkpoint")
        seen.add(name)
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, tensor in items:
        arr = np.ascontiguousarray(tensor, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    reader = _Reader(path, _read(path))
    reader.header(CHECKPOINT_MAGIC)
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        if name in tensors:
            raise DuplicateTensorError(f"{path}: tensor '{name}' appears twice")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        tensors[name] = reader.array("<f8", shape).astype(np.float64)
    reader.finish()
    return tensors


def save_mapset(path: PathLike, maps: MapSet):
    parts = [MAPSET_MAGIC, struct.pack("<III", VERSION, maps.height, maps.width)]
    for name, channels in FILE_BLOCKS:
        parts.append(struct.pack("<I", channels))
        parts.append(np.ascontiguousarray(getattr(maps, name), dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_mapset(path: PathLike) -> MapSet:
    reader = _Reader(path, _read(path))
    reader.header(MAPSET_MAGIC)
    height, width = reader.u32(), reader.u32()
    blocks = {}
    for name, channels in FILE_BLOCKS:
        found = reader.u32()
        if found != channels:
            raise DataError(f"{path}: map '{name}' has {found} channels, expected {channels}")
        blocks[name] = reader.array("<f4", (height, width, channels)).astype(np.float64)
    reader.finish()
    return MapSet(**blocks)
