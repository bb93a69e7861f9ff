"""Append-only node-local files and the shadow write checker.

All durable state (PLog replicas, slice logs) lives in an ``AppendOnlyFS``.
Paths look like ``<node>/<name>``. Files can be appended to, read, and removed
as a whole; there is no call that writes at an arbitrary offset.

The ``ShadowWriteChecker`` independently records every byte range handed to
the file system and flags any range written twice. ``GLOBAL_WRITE_CHECKER``
accumulates across every file system created in the process so a test session
can assert that nothing was ever overwritten.
"""

from __future__ import annotations

import itertools
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class WriteViolation:
    path: str
    offset: int
    length: int
    overlapped: tuple[int, int]


@dataclass
class ShadowWriteChecker:
    writes: int = 0
    violations: list[WriteViolation] = field(default_factory=list)
    # path -> sorted, merged list of [start, end) ranges already written
    _ranges: dict[str, list[list[int]]] = field(default_factory=lambda: defaultdict(list))

    def record(self, path: str, offset: int, length: int) -> None:
        if length <= 0:
            return
        self.writes += 1
        start, end = offset, offset + length
        ranges = self._ranges[path]
        for lo, hi in ranges:
            if lo < end and start < hi:
                self.violations.append(WriteViolation(path, offset, length, (lo, hi)))
        if ranges and ranges[-1][1] == start:
            ranges[-1][1] = end
        else:
            ranges.append([start, end])
            ranges.sort()

    @property
    def overwritten(self) -> int:
        return len(self.violations)


GLOBAL_WRITE_CHECKER = ShadowWriteChecker()
_fs_ids = itertools.count(1)


class FileMissing(FileNotFoundError):
    pass


class AppendOnlyFS:
    """In-memory append-only files, optionally mirrored to a real directory."""

    def __init__(self, root: str | os.PathLike | None = None, checker: ShadowWriteChecker | None = None):
        self._files: dict[str, bytearray] = {}
        self.root = Path(root) if root is not None else None
        self.checker = checker or ShadowWriteChecker()
        self.bytes_written = 0
        self.bytes_read = 0
        self._global_prefix = f"fs{next(_fs_ids)}:"

    def exists(self, path: str) -> bool:
        return path in self._files

    def size(self, path: str) -> int:
        try:
            return len(self._files[path])
        except KeyError:
            raise FileMissing(path) from None

    def create(self, path: str) -> None:
        if path in self._files:
            raise FileExistsError(path)
        self._files[path] = bytearray()
        if self.root is not None:
            real = self.root / path
            real.parent.mkdir(parents=True, exist_ok=True)
            real.touch(exist_ok=False)

    def append(self, path: str, data: bytes) -> int:
        """Append ``data``; return the offset it landed at."""
        if path not in self._files:
            self.create(path)
        buf = self._files[path]
        offset = len(buf)
        self.checker.record(path, offset, len(data))
        GLOBAL_WRITE_CHECKER.record(self._global_prefix + path, offset, len(data))
        buf += data
        self.bytes_written += len(data)
        if self.root is not None:
            with open(self.root / path, "ab") as fh:
                fh.write(data)
        return offset

    def read(self, path: str, offset: int, length: int) -> bytes:
        try:
            buf = self._files[path]
        except KeyError:
            raise FileMissing(path) from None
        if offset < 0 or offset + length > len(buf):
            raise ValueError(f"read [{offset}, {offset + length}) beyond {path} of {len(buf)} bytes")
        self.bytes_read += length
        return bytes(buf[offset : offset + length])

    def read_all(self, path: str) -> bytes:
        return self.read(path, 0, self.size(path))

    def delete(self, path: str) -> None:
        if path not in self._files:
            raise FileMissing(path)
        # the shadow ranges stay: a retired path that is written again is flagged
        del self._files[path]
        if self.root is not None:
            (self.root / path).unlink(missing_ok=True)

    def listdir(self, node: str) -> list[str]:
        prefix = f"{node}/"
        return sorted(p for p in self._files if p.startswith(prefix))
