"""Domain primitives shared by every storage component.

LSNs and page ids are plain integers; LSN 0 means "none". A log record is one
page mutation, either a full page image or a byte-range delta, and is the unit
of durability and replay.

Record encoding (little-endian)::

    magic   u32   0x54524C47 ("TRLG")
    db      u32
    slice   u32
    page    u64
    lsn     u64
    kind    u8    1 = full image, 2 = delta
    flags   u8    bit 0 = last record of a group
    length  u32   payload length
    payload       full image bytes, or u32 offset + bytes for a delta
    crc     u32   CRC32 over everything above
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import NewType, Union

Lsn = NewType("Lsn", int)
PageId = NewType("PageId", int)

NO_LSN = Lsn(0)
DEFAULT_PAGE_SIZE = 8192

RECORD_MAGIC = 0x54524C47
_HEADER = struct.Struct("<IIIQQBBI")
_CRC = struct.Struct("<I")
_DELTA_OFFSET = struct.Struct("<I")
HEADER_SIZE = _HEADER.size
CRC_SIZE = _CRC.size

KIND_FULL = 1
KIND_DELTA = 2
FLAG_GROUP_END = 0x01


class LogFormatError(ValueError):
    """Base class for undecodable log bytes."""


class BadMagic(LogFormatError):
    pass


class BadChecksum(LogFormatError):
    """CRC mismatch; a torn or corrupted tail."""


class Truncated(LogFormatError):
    """Not enough bytes for a whole record; a clean end of log."""


class VersionOrderViolation(ValueError):
    pass


class DeltaOutOfBounds(ValueError):
    pass


@dataclass(frozen=True, order=True, slots=True)
class SliceId:
    database: int
    index: int

    def __str__(self) -> str:
        return f"{self.database}_{self.index}"


@dataclass(frozen=True, slots=True)
class FullImage:
    data: bytes


@dataclass(frozen=True, slots=True)
class Delta:
    offset: int
    data: bytes


Payload = Union[FullImage, Delta]


@dataclass(frozen=True, slots=True)
class LogRecord:
    slice: SliceId
    page: int
    lsn: int
    op: Payload
    group_end: bool = False

    @property
    def checksum(self) -> int:
        return _CRC.unpack(encode_log_record(self)[-CRC_SIZE:])[0]


@dataclass(frozen=True, slots=True)
class LogFragment:
    """A per-slice batch of records shipped to the slice's Page Stores.

    ``covers_from`` is the exclusive lower end of the LSN interval this
    fragment vouches for: every record of the slice with
    ``covers_from < lsn <= covers_to`` is included. ``sequence`` is 0 for
    repair and gossip traffic, which does not consume a sequence number.
    """

    slice: SliceId
    sequence: int
    records: tuple[LogRecord, ...]
    covers_from: int
    covers_to: int
    group_ends: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        lsns = [r.lsn for r in self.records]
        if lsns != sorted(lsns) or len(set(lsns)) != len(lsns):
            raise ValueError("fragment records must be strictly ascending by lsn")
        if any(r.slice != self.slice for r in self.records):
            raise ValueError("fragment holds a record of another slice")
        if self.covers_to < self.covers_from:
            raise ValueError("empty coverage interval")
        if lsns and (lsns[0] <= self.covers_from or lsns[-1] > self.covers_to):
            raise ValueError("records fall outside the covered interval")

    @property
    def last_lsn(self) -> int:
        return self.records[-1].lsn if self.records else NO_LSN


@dataclass(frozen=True, slots=True)
class DatabaseLogBuffer:
    records: tuple[LogRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise ValueError("database log buffer must not be empty")
        if not self.records[-1].group_end:
            raise ValueError("database log buffer must end on a group boundary")

    @property
    def last_lsn(self) -> int:
        return max(r.lsn for r in self.records)


@dataclass(frozen=True, slots=True)
class PageImage:
    page: int
    version: int
    data: bytes

    @classmethod
    def zero(cls, page: int, page_size: int = DEFAULT_PAGE_SIZE) -> "PageImage":
        return cls(page, NO_LSN, bytes(page_size))


def page_to_slice(page: int, pages_per_slice: int, database: int = 0) -> SliceId:
    if pages_per_slice < 1:
        raise ValueError("pages_per_slice must be >= 1")
    if page < 0:
        raise ValueError("page ids are unsigned")
    return SliceId(database, page // pages_per_slice)


def encoded_length(record: LogRecord) -> int:
    return HEADER_SIZE + _payload_length(record.op) + CRC_SIZE


def _payload_length(op: Payload) -> int:
    if isinstance(op, FullImage):
        return len(op.data)
    return _DELTA_OFFSET.size + len(op.data)


def encode_log_record(record: LogRecord) -> bytes:
    op = record.op
    if isinstance(op, FullImage):
        kind, payload = KIND_FULL, op.data
    elif isinstance(op, Delta):
        kind, payload = KIND_DELTA, _DELTA_OFFSET.pack(op.offset) + op.data
    else:
        raise TypeError(f"unknown payload {op!r}")
    flags = FLAG_GROUP_END if record.group_end else 0
    head = _HEADER.pack(
        RECORD_MAGIC,
        record.slice.database,
        record.slice.index,
        record.page,
        record.lsn,
        kind,
        flags,
        len(payload),
    )
    body = head + payload
    return body + _CRC.pack(zlib.crc32(body))


def decode_log_record(buf: bytes | bytearray | memoryview, offset: int = 0) -> tuple[LogRecord, int]:
    """Decode one record at ``offset``; return it and the bytes consumed."""
    end = len(buf)
    if end - offset < HEADER_SIZE:
        if end - offset >= 4 and struct.unpack_from("<I", buf, offset)[0] != RECORD_MAGIC:
            raise BadMagic(f"bad magic at offset {offset}")
        raise Truncated(f"{end - offset} bytes left, header needs {HEADER_SIZE}")
    magic, db, idx, page, lsn, kind, flags, length = _HEADER.unpack_from(buf, offset)
    if magic != RECORD_MAGIC:
        raise BadMagic(f"bad magic {magic:#x} at offset {offset}")
    total = HEADER_SIZE + length + CRC_SIZE
    if end - offset < total:
        raise Truncated(f"record at {offset} needs {total} bytes, {end - offset} available")
    body = bytes(buf[offset : offset + HEADER_SIZE + length])
    (crc,) = _CRC.unpack_from(buf, offset + HEADER_SIZE + length)
    if zlib.crc32(body) != crc:
        raise BadChecksum(f"crc mismatch for record at {offset}")
    payload = body[HEADER_SIZE:]
    if kind == KIND_FULL:
        op: Payload = FullImage(payload)
    elif kind == KIND_DELTA:
        if length < _DELTA_OFFSET.size:
            raise BadChecksum("delta payload shorter than its offset field")
        (doff,) = _DELTA_OFFSET.unpack_from(payload)
        op = Delta(doff, payload[_DELTA_OFFSET.size :])
    else:
        raise BadChecksum(f"unknown payload kind {kind}")
    record = LogRecord(SliceId(db, idx), page, lsn, op, bool(flags & FLAG_GROUP_END))
    return record, total


def decode_log_stream(buf: bytes | bytearray | memoryview) -> list[LogRecord]:
    """Decode back-to-back records, stopping cleanly at a truncated tail."""
    out = []
    pos = 0
    while pos < len(buf):
        try:
            record, used = decode_log_record(buf, pos)
        except Truncated:
            break
        out.append(record)
        pos += used
    return out


def apply_record(base: PageImage, record: LogRecord) -> PageImage:
    if record.page != base.page:
        raise ValueError(f"record for page {record.page} applied to page {base.page}")
    if record.lsn <= base.version:
        raise VersionOrderViolation(f"lsn {record.lsn} not after page version {base.version}")
    size = len(base.data)
    op = record.op
    if isinstance(op, FullImage):
        if len(op.data) != size:
            raise DeltaOutOfBounds(f"full image of {len(op.data)} bytes for a {size}-byte page")
        return PageImage(base.page, record.lsn, op.data)
    if op.offset + len(op.data) > size:
        raise DeltaOutOfBounds(f"delta [{op.offset}, {op.offset + len(op.data)}) exceeds page size {size}")
    data = bytearray(base.data)
    data[op.offset : op.offset + len(op.data)] = op.data
    return PageImage(base.page, record.lsn, bytes(data))
