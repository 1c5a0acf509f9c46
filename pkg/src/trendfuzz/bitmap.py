"""AFL-compatible coverage bitmaps and the set algebra the allocator needs.

A bitmap holds one byte per map entry. Each byte is a union of hit-class
bucket bits (bit 0 = hit once, ..., bit 7 = hit 128+ times), never a raw
counter. Raw per-execution counters live in plain ``uint8`` arrays and are
turned into bitmaps with :func:`bucketize`.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from trendfuzz.errors import ConfigError, FormatError, PreconditionError

DEFAULT_MAP_SIZE = 1 << 16

# (low, high) inclusive hit-count range for bucket bits 0..7
BUCKET_RANGES = ((1, 1), (2, 2), (3, 3), (4, 7), (8, 15), (16, 31), (32, 127), (128, 255))


def _build_bucket_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint8)
    for bit, (lo, hi) in enumerate(BUCKET_RANGES):
        table[lo : hi + 1] = 1 << bit
    return table


BUCKET_TABLE = _build_bucket_table()
BUCKET_TABLE.setflags(write=False)

# popcount per byte, for bit-granularity counting
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def check_map_size(map_size: int) -> int:
    if map_size <= 0 or map_size & (map_size - 1):
        raise ConfigError(f"map_size must be a positive power of two, got {map_size}")
    return map_size


class CoverageBitmap:
    """Immutable array of bucket bytes.

    Equality compares contents; the backing array is read-only so a bitmap
    can be handed across threads without copying.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: np.ndarray | bytes | bytearray | Sequence[int]):
        if isinstance(entries, (bytes, bytearray)):
            arr = np.frombuffer(bytes(entries), dtype=np.uint8).copy()
        else:
            arr = np.array(entries, dtype=np.uint8)
        if arr.ndim != 1:
            raise ConfigError("bitmap must be one-dimensional")
        check_map_size(arr.size)
        arr.setflags(write=False)
        self._entries = arr

    @classmethod
    def empty(cls, map_size: int = DEFAULT_MAP_SIZE) -> "CoverageBitmap":
        return cls(np.zeros(check_map_size(map_size), dtype=np.uint8))

    @classmethod
    def from_entries(cls, entries: dict[int, int], map_size: int = DEFAULT_MAP_SIZE) -> "CoverageBitmap":
        """Build a bitmap from ``{index: bucket_byte}``."""
        arr = np.zeros(check_map_size(map_size), dtype=np.uint8)
        for idx, value in entries.items():
            arr[idx] = value
        return cls(arr)

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def map_size(self) -> int:
        return int(self._entries.size)

    def __len__(self) -> int:
        return self.map_size

    def __getitem__(self, idx):
        return self._entries[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoverageBitmap):
            return NotImplemented
        return self.map_size == other.map_size and bool(np.array_equal(self._entries, other._entries))

    def __hash__(self) -> int:
        return hash(self._entries.tobytes())

    def __or__(self, other: "CoverageBitmap") -> "CoverageBitmap":
        return union_into(self, other)

    def __and__(self, other: "CoverageBitmap") -> "CoverageBitmap":
        return intersect_all([self, other])

    def __sub__(self, other: "CoverageBitmap") -> "CoverageBitmap":
        return subtract(self, other)

    def count(self) -> int:
        return count(self)

    def density(self) -> float:
        return density(self)

    def nonzero(self) -> np.ndarray:
        """Indices of entries with any bucket bit set."""
        return np.flatnonzero(self._entries)

    def __repr__(self) -> str:
        return f"CoverageBitmap(map_size={self.map_size}, count={count(self)})"


def _same_size(*bitmaps: CoverageBitmap) -> None:
    sizes = {b.map_size for b in bitmaps}
    if len(sizes) > 1:
        raise ConfigError(f"bitmap size mismatch: {sorted(sizes)}")


def bucketize(raw: np.ndarray | bytes | Sequence[int], map_size: int | None = None) -> CoverageBitmap:
    """Map raw hit counters (0-255) to their single hit-class bucket bit."""
    if isinstance(raw, (bytes, bytearray)):
        arr = np.frombuffer(bytes(raw), dtype=np.uint8)
    else:
        arr = np.asarray(raw)
        if arr.dtype != np.uint8:
            # counters saturate at 255
            arr = np.clip(arr, 0, 255).astype(np.uint8)
    if map_size is not None and arr.size != map_size:
        raise ConfigError(f"raw hit map has {arr.size} entries, campaign map_size is {map_size}")
    return CoverageBitmap(BUCKET_TABLE[arr])


def union_into(acc: CoverageBitmap, new: CoverageBitmap) -> CoverageBitmap:
    _same_size(acc, new)
    return CoverageBitmap(acc.entries | new.entries)


def intersect_all(bitmaps: Iterable[CoverageBitmap]) -> CoverageBitmap:
    bitmaps = list(bitmaps)
    if not bitmaps:
        raise PreconditionError("intersect_all needs at least one bitmap")
    _same_size(*bitmaps)
    out = bitmaps[0].entries.copy()
    for b in bitmaps[1:]:
        out &= b.entries
    return CoverageBitmap(out)


def subtract(b: CoverageBitmap, common: CoverageBitmap, mode: str = "bits") -> CoverageBitmap:
    """Remove ``common`` from ``b``.

    ``mode="bits"`` clears only the shared bucket bits, so an entry reached
    in a new hit-count range survives. ``mode="entries"`` drops every entry
    that is set in ``common`` at all.
    """
    _same_size(b, common)
    if mode == "bits":
        return CoverageBitmap(b.entries & ~common.entries)
    if mode == "entries":
        return CoverageBitmap(np.where(common.entries != 0, 0, b.entries).astype(np.uint8))
    raise ConfigError(f"unknown subtract mode {mode!r}")


def count(b: CoverageBitmap, granularity: str = "entries") -> int:
    """Number of covered entries (or set bucket bits with ``granularity="bits"``)."""
    if granularity == "entries":
        return int(np.count_nonzero(b.entries))
    if granularity == "bits":
        return int(_POPCOUNT[b.entries].sum(dtype=np.int64))
    raise ConfigError(f"unknown count granularity {granularity!r}")


def density(b: CoverageBitmap) -> float:
    return count(b) / b.map_size


def serialize(b: CoverageBitmap) -> bytes:
    return b.entries.tobytes()


def deserialize(data: bytes, map_size: int = DEFAULT_MAP_SIZE) -> CoverageBitmap:
    if len(data) != map_size:
        raise FormatError(f"bitmap file has {len(data)} bytes, expected {map_size}")
    return CoverageBitmap(data)


def save(b: CoverageBitmap, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize(b))
    os.replace(tmp, path)


def load(path: str | os.PathLike, map_size: int = DEFAULT_MAP_SIZE) -> CoverageBitmap:
    return deserialize(Path(path).read_bytes(), map_size)


class BitmapAccumulator:
    """Single-writer growing bitmap with consistent snapshot reads."""

    def __init__(self, map_size: int = DEFAULT_MAP_SIZE, initial: CoverageBitmap | None = None):
        self._lock = threading.Lock()
        self._current = initial if initial is not None else CoverageBitmap.empty(map_size)
        self.map_size = self._current.map_size

    def add(self, bitmap: CoverageBitmap) -> int:
        """Union ``bitmap`` in; returns the number of newly covered entries."""
        with self._lock:
            before = count(self._current)
            self._current = union_into(self._current, bitmap)
            return count(self._current) - before

    def snapshot(self) -> CoverageBitmap:
        with self._lock:
            return self._current
