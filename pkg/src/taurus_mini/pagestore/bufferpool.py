"""Node-global write-back page cache with LFU (aged) or LRU eviction."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Hashable

from ..core import PageImage

POLICIES = ("lfu", "lru")


@dataclass
class PoolEntry:
    image: PageImage
    dirty: bool = False
    freq: int = 1
    tick: int = 0


class BufferPool:
    """Holds the latest consolidated image per page.

    ``on_evict_dirty(key, image)`` must persist a dirty page; it runs before
    the page leaves the pool.
    """

    def __init__(
        self,
        capacity: int,
        policy: str = "lfu",
        aging_interval: int = 1024,
        on_evict_dirty: Callable[[Hashable, PageImage], None] | None = None,
    ):
        if policy not in POLICIES:
            raise ValueError(f"unknown buffer pool policy {policy!r}")
        self.capacity = capacity
        self.policy = policy
        self.aging_interval = aging_interval
        self.on_evict_dirty = on_evict_dirty
        self.entries: OrderedDict[Hashable, PoolEntry] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self._tick = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def _touch(self, key, entry: PoolEntry) -> None:
        self._tick += 1
        entry.tick = self._tick
        if self.policy == "lru":
            self.entries.move_to_end(key)
        else:
            entry.freq += 1
            if self.aging_interval and self._tick % self.aging_interval == 0:
                for e in self.entries.values():
                    e.freq >>= 1

    def peek(self, key) -> PageImage | None:
        entry = self.entries.get(key)
        return entry.image if entry else None

    def get(self, key) -> PageImage | None:
        entry = self.entries.get(key)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        self._touch(key, entry)
        return entry.image

    def put(self, key, image: PageImage, dirty: bool = False) -> None:
        if self.capacity <= 0:
            if dirty and self.on_evict_dirty is not None:
                self.on_evict_dirty(key, image)
            return
        entry = self.entries.get(key)
        if entry is not None:
            entry.image = image
            entry.dirty = entry.dirty or dirty
            self._touch(key, entry)
            return
        while len(self.entries) >= self.capacity:
            self.evict_one()
        self._tick += 1
        self.entries[key] = PoolEntry(image, dirty, 1, self._tick)

    def _victim(self):
        if self.policy == "lru":
            return next(iter(self.entries))
        # least frequent, oldest access among equals
        return min(self.entries.items(), key=lambda kv: (kv[1].freq, kv[1].tick))[0]

    def evict_one(self) -> None:
        key = self._victim()
        entry = self.entries[key]
        if entry.dirty and self.on_evict_dirty is not None:
            self.on_evict_dirty(key, entry.image)
        del self.entries[key]
        self.evictions += 1

    def dirty_items(self) -> list[tuple[Hashable, PageImage]]:
        return [(k, e.image) for k, e in self.entries.items() if e.dirty]

    def mark_clean(self, key, version: int) -> None:
        entry = self.entries.get(key)
        if entry is not None and entry.image.version == version:
            entry.dirty = False

    def discard(self, key) -> None:
        self.entries.pop(key, None)

    def clear(self) -> None:
        self.entries.clear()

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
