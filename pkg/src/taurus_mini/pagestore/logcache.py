"""Node-global cache of received log fragments awaiting consolidation."""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass

from ..core import LogFragment, SliceId

LOG_CACHE_CENTRIC = "log_cache_centric"
LONGEST_CHAIN_FIRST = "longest_chain_first"
CONSOLIDATION_POLICIES = (LOG_CACHE_CENTRIC, LONGEST_CHAIN_FIRST)


@dataclass
class CachedFragment:
    key: int  # arrival order, node-wide
    slice: SliceId
    block_offset: int
    fragment: LogFragment


class LogCache:
    """Bounded set of resident fragments.

    Under the log-cache-centric policy a full cache diverts newcomers to an
    overflow queue (their bytes are already in the slice log) and reloads them
    in arrival order as space frees. Under longest-chain-first the oldest
    resident fragment is simply dropped; its records then need disk reads.
    """

    def __init__(self, capacity: int, policy: str = LOG_CACHE_CENTRIC):
        if policy not in CONSOLIDATION_POLICIES:
            raise ValueError(f"unknown consolidation policy {policy!r}")
        self.capacity = max(capacity, 1)
        self.policy = policy
        self.resident: OrderedDict[int, CachedFragment] = OrderedDict()
        self.overflow: list[CachedFragment] = []  # sorted by key
        self._where: dict[tuple[SliceId, int], int] = {}
        self._next = 0
        self.spills = 0
        self.reloads = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.resident)

    def new_key(self) -> int:
        self._next += 1
        return self._next

    def is_resident(self, slice_id: SliceId, lsn: int) -> bool:
        return (slice_id, lsn) in self._where

    def _index(self, cf: CachedFragment) -> None:
        for r in cf.fragment.records:
            self._where[(cf.slice, r.lsn)] = cf.key

    def _unindex(self, cf: CachedFragment) -> None:
        for r in cf.fragment.records:
            if self._where.get((cf.slice, r.lsn)) == cf.key:
                del self._where[(cf.slice, r.lsn)]

    def _queue(self, cf: CachedFragment) -> None:
        bisect.insort(self.overflow, cf, key=lambda c: c.key)

    def admit(self, cf: CachedFragment, priority: bool = False) -> bool:
        """Insert a fragment; return True if it became resident."""
        if len(self.resident) >= self.capacity:
            if self.policy == LONGEST_CHAIN_FIRST:
                _, old = self.resident.popitem(last=False)
                self._unindex(old)
                self.evictions += 1
            elif priority:
                self.spill_newest()
            else:
                self._queue(cf)
                self.spills += 1
                return False
        self.resident[cf.key] = cf
        self._index(cf)
        return True

    def spill_newest(self) -> None:
        _, newest = self.resident.popitem(last=True)
        self._unindex(newest)
        self._queue(newest)
        self.spills += 1

    def release(self, key: int) -> None:
        cf = self.resident.pop(key, None)
        if cf is not None:
            self._unindex(cf)

    def refill(self) -> int:
        moved = 0
        while self.overflow and len(self.resident) < self.capacity:
            cf = self.overflow.pop(0)
            self.resident[cf.key] = cf
            self._index(cf)
            moved += 1
        self.reloads += moved
        return moved

    def rotate(self) -> bool:
        """Swap the newest resident for the oldest queued fragment."""
        if not self.overflow or not self.resident:
            return False
        cf = self.overflow.pop(0)
        self.spill_newest()
        self.resident[cf.key] = cf
        self._index(cf)
        self.reloads += 1
        return True

    def drop_slice(self, slice_id: SliceId) -> None:
        for key in [k for k, cf in self.resident.items() if cf.slice == slice_id]:
            self.release(key)
        self.overflow = [cf for cf in self.overflow if cf.slice != slice_id]

    def clear(self) -> None:
        self.resident.clear()
        self.overflow.clear()
        self._where.clear()
