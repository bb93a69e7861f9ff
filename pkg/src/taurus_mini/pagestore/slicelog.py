"""On-disk slice log: typed, length-prefixed, CRC'd blocks.

Block layout (little-endian)::

    type    u32   1 fragment, 2 page, 3 base, 4 recycle
    length  u32   body length
    body
    crc     u32   CRC32 over type, length and body

fragment body: seq u64, covers_from u64, covers_to u64, count u32, records
page body:     page u64, version u64, size u32, bytes
base body:     base_lsn u64, count u32, then page bodies
recycle body:  lsn u64
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterator, Union

from ..core import LogFragment, LogRecord, PageImage, SliceId, decode_log_record, encode_log_record

BLOCK_FRAGMENT = 1
BLOCK_PAGE = 2
BLOCK_BASE = 3
BLOCK_RECYCLE = 4

_HEAD = struct.Struct("<II")
_CRC = struct.Struct("<I")
_FRAG = struct.Struct("<QQQI")
_PAGE = struct.Struct("<QQI")
_BASE = struct.Struct("<QI")
_U64 = struct.Struct("<Q")


def slice_log_path(node_id: str, slice_id: SliceId) -> str:
    return f"{node_id}/{slice_id.database}_{slice_id.index}.slog"


@dataclass(frozen=True)
class BaseBlock:
    base_lsn: int
    pages: tuple[PageImage, ...]


@dataclass(frozen=True)
class RecycleBlock:
    lsn: int


Block = Union[LogFragment, PageImage, BaseBlock, RecycleBlock]


def _frame(kind: int, body: bytes) -> bytes:
    head = _HEAD.pack(kind, len(body))
    return head + body + _CRC.pack(zlib.crc32(head + body))


def _page_body(image: PageImage) -> bytes:
    return _PAGE.pack(image.page, image.version, len(image.data)) + image.data


def encode_fragment_block(fragment: LogFragment) -> bytes:
    parts = [_FRAG.pack(fragment.sequence, fragment.covers_from, fragment.covers_to, len(fragment.records))]
    parts += [encode_log_record(r) for r in fragment.records]
    return _frame(BLOCK_FRAGMENT, b"".join(parts))


def encode_page_block(image: PageImage) -> bytes:
    return _frame(BLOCK_PAGE, _page_body(image))


def encode_base_block(base_lsn: int, pages: list[PageImage]) -> bytes:
    body = _BASE.pack(base_lsn, len(pages)) + b"".join(_page_body(p) for p in pages)
    return _frame(BLOCK_BASE, body)


def encode_recycle_block(lsn: int) -> bytes:
    return _frame(BLOCK_RECYCLE, _U64.pack(lsn))


def _decode_page(body: bytes, pos: int) -> tuple[PageImage, int]:
    page, version, size = _PAGE.unpack_from(body, pos)
    start = pos + _PAGE.size
    return PageImage(page, version, bytes(body[start : start + size])), start + size


def decode_block(buf: bytes, offset: int, slice_id: SliceId) -> tuple[Block, int] | None:
    """Decode the block at ``offset``; None at a clean or torn end."""
    if offset + _HEAD.size > len(buf):
        return None
    kind, length = _HEAD.unpack_from(buf, offset)
    end = offset + _HEAD.size + length + _CRC.size
    if end > len(buf):
        return None
    (crc,) = _CRC.unpack_from(buf, end - _CRC.size)
    if zlib.crc32(buf[offset : end - _CRC.size]) != crc:
        return None
    body = buf[offset + _HEAD.size : end - _CRC.size]
    if kind == BLOCK_FRAGMENT:
        seq, lo, hi, count = _FRAG.unpack_from(body)
        pos = _FRAG.size
        records: list[LogRecord] = []
        group_ends = []
        for _ in range(count):
            rec, used = decode_log_record(body, pos)
            records.append(rec)
            if rec.group_end:
                group_ends.append(rec.lsn)
            pos += used
        block: Block = LogFragment(slice_id, seq, tuple(records), lo, hi, frozenset(group_ends))
    elif kind == BLOCK_PAGE:
        block, _ = _decode_page(body, 0)
    elif kind == BLOCK_BASE:
        base_lsn, count = _BASE.unpack_from(body)
        pos = _BASE.size
        pages = []
        for _ in range(count):
            image, pos = _decode_page(body, pos)
            pages.append(image)
        block = BaseBlock(base_lsn, tuple(pages))
    elif kind == BLOCK_RECYCLE:
        block = RecycleBlock(_U64.unpack_from(body)[0])
    else:
        return None
    return block, end - offset


def scan_blocks(buf: bytes, slice_id: SliceId) -> Iterator[tuple[int, Block]]:
    pos = 0
    while True:
        decoded = decode_block(buf, pos, slice_id)
        if decoded is None:
            return
        block, used = decoded
        yield pos, block
        pos += used
