"""The Page Store server.

Each hosted slice replica keeps its state in an append-only slice log plus
in-memory indexes rebuilt from that log on restart. Received fragments carry
a coverage interval; the union of intervals tells the replica which LSNs it
provably has, so the persistent LSN is the end of the covered prefix and the
gap list is the set of holes above it.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..config import Config
from ..core import LogFragment, LogRecord, PageImage, SliceId, apply_record
from ..rpc import RPC_ERRORS
from ..storage import AppendOnlyFS
from . import slicelog
from .bufferpool import BufferPool
from .intervals import IntervalSet
from .logcache import LOG_CACHE_CENTRIC, CachedFragment, LogCache


class PageStoreError(Exception):
    pass


class UnknownSlice(PageStoreError, KeyError):
    pass


class NotCaughtUp(PageStoreError):
    pass


class BelowRecycleLsn(PageStoreError):
    pass


class RecycleLsnRegression(PageStoreError):
    pass


class PeerUnavailable(PageStoreError):
    pass


class SourceUnavailable(PageStoreError):
    pass


@dataclass(frozen=True)
class WriteAck:
    node: str
    slice: SliceId
    persistent_lsn: int
    throttle: bool
    last_seq: int


@dataclass(frozen=True)
class SliceStatus:
    node: str
    slice: SliceId
    persistent_lsn: int
    gaps: tuple[tuple[int, int], ...]  # closed LSN ranges [first, last]
    max_covered: int
    last_seq: int
    floor: int
    serving: bool

    def missing(self, upto: int) -> IntervalSet:
        """Uncovered LSNs in ``(0, upto]`` as an interval set."""
        out = IntervalSet((a - 1, b) for a, b in self.gaps)
        if upto > self.max_covered:
            out.add(self.max_covered, upto)
        return out


@dataclass
class PageHistory:
    versions: list[int] = field(default_factory=list)  # on-disk versions, ascending
    locations: dict[int, tuple[int, int]] = field(default_factory=dict)  # version -> (block offset, base index)
    records: list[int] = field(default_factory=list)  # retained record LSNs, ascending
    consolidated: int = 0  # every record <= this is folded into the latest image


@dataclass
class SliceReplica:
    slice: SliceId
    coverage: IntervalSet = field(default_factory=IntervalSet)
    records: dict[int, LogRecord] = field(default_factory=dict)
    pages: dict[int, PageHistory] = field(default_factory=dict)
    base_lsn: int = 0
    recycle_lsn: int = 0
    last_seq: int = 0
    serving: bool = True
    pending: int = 0  # received records not yet consolidated

    @property
    def persistent_lsn(self) -> int:
        return self.coverage.prefix_end(0)

    @property
    def floor(self) -> int:
        """Below this LSN individual records are no longer guaranteed."""
        return max(self.base_lsn, self.recycle_lsn)

    def history(self, page: int) -> PageHistory:
        hist = self.pages.get(page)
        if hist is None:
            hist = self.pages[page] = PageHistory()
        return hist

    def gap_ranges(self) -> list[tuple[int, int]]:
        return [(lo + 1, hi) for lo, hi in self.coverage.gaps(self.persistent_lsn)]


_BLOCK_HEAD = struct.Struct("<II")


class PageStoreNode:
    def __init__(
        self,
        node_id: str,
        config: Config | None = None,
        fs: AppendOnlyFS | None = None,
        rpc=None,
        env=None,
        peers_of: Callable[[SliceId], Iterable[str]] | None = None,
    ):
        self.node_id = node_id
        self.config = config or Config()
        self.fs = fs if fs is not None else AppendOnlyFS()
        self.rpc = rpc
        self.env = env
        self.peers_of = peers_of or (lambda s: ())
        self.slices: dict[SliceId, SliceReplica] = {}
        self.rebuilding: set[SliceId] = set()
        self.log_cache = LogCache(self.config.log_cache_fragments, self.config.consolidation_policy)
        self.pool = BufferPool(
            self.config.buffer_pool_pages,
            self.config.buffer_pool_policy,
            self.config.lfu_aging_interval,
            on_evict_dirty=self._flush_page,
        )
        self.metrics = {
            "diskRecordReads": 0,
            "readRecordFetches": 0,
            "gossipRecordsExchanged": 0,
            "pagesConsolidated": 0,
            "fragmentsReceived": 0,
            "duplicateFragments": 0,
            "pagesFlushed": 0,
        }
        self._consolidation_armed = False
        self._gossip_turn: dict[SliceId, int] = {}
        self.up = True

    # plumbing

    def _timer(self, delay: float, fn, *args) -> None:
        if self.env is not None:
            self.env.set_timer(self.node_id, delay, fn, *args)

    def _trace(self, kind: str, *fields) -> None:
        trace = getattr(self.env, "trace", None)
        if trace is not None:
            trace.log(self.env.now, kind, *fields)

    def start(self) -> None:
        """Arm periodic work; called at boot and after every restart."""
        self._consolidation_armed = False
        self._timer(self.config.dirty_flush_interval_ms, self._dirty_tick)
        if self.config.gossip_enabled:
            self._timer(self.config.gossip_interval_ms, self._gossip_tick)
        if self.pending_records():
            self._arm_consolidation()

    def _replica(self, slice_id: SliceId) -> SliceReplica:
        try:
            return self.slices[slice_id]
        except KeyError:
            raise UnknownSlice(f"{self.node_id} does not host slice {slice_id}") from None

    def _path(self, slice_id: SliceId) -> str:
        return slicelog.slice_log_path(self.node_id, slice_id)

    def _append(self, slice_id: SliceId, block: bytes) -> int:
        return self.fs.append(self._path(slice_id), block)

    @property
    def bufferPoolHits(self) -> int:
        return self.pool.hits

    @property
    def bufferPoolMisses(self) -> int:
        return self.pool.misses

    @property
    def logCacheSpills(self) -> int:
        return self.log_cache.spills

    def pending_records(self) -> int:
        return sum(rep.pending for rep in self.slices.values())

    def hosted(self) -> list[SliceId]:
        return sorted(self.slices)

    # slice membership

    def host_slice(self, slice_id: SliceId, rebuild: bool = False) -> None:
        if slice_id in self.slices:
            return
        rep = SliceReplica(slice_id, serving=not rebuild)
        self.slices[slice_id] = rep
        if not self.fs.exists(self._path(slice_id)):
            self.fs.create(self._path(slice_id))
        if rebuild:
            self.rebuilding.add(slice_id)

    def drop_slice(self, slice_id: SliceId) -> None:
        self.slices.pop(slice_id, None)
        self.rebuilding.discard(slice_id)
        self.log_cache.drop_slice(slice_id)
        for key in [k for k in self.pool.entries if k[0] == slice_id]:
            self.pool.discard(key)

    # write path

    def write_logs(self, slice_id: SliceId, fragment: LogFragment) -> WriteAck:
        rep = self._replica(slice_id)
        self.metrics["fragmentsReceived"] += 1
        if fragment.slice != slice_id:
            raise ValueError("fragment addressed to the wrong slice")
        floor = rep.base_lsn
        new = tuple(r for r in fragment.records if r.lsn > floor and not rep.coverage.contains(r.lsn))
        lo = max(fragment.covers_from, floor)
        gains = lo < fragment.covers_to and bool(rep.coverage.missing(lo, fragment.covers_to))
        if not new and not gains:
            self.metrics["duplicateFragments"] += 1
            rep.last_seq = max(rep.last_seq, fragment.sequence)
            return self._ack(rep)
        hi = max(fragment.covers_to, lo)
        stored = LogFragment(
            slice_id,
            fragment.sequence,
            new,
            lo,
            hi,
            frozenset(r.lsn for r in new if r.group_end),
        )
        offset = self._append(slice_id, slicelog.encode_fragment_block(stored))
        self._ingest(rep, stored, offset)
        if rep.pending:
            self._arm_consolidation()
        return self._ack(rep)

    def _ack(self, rep: SliceReplica) -> WriteAck:
        throttle = self.pending_records() > self.config.throttle_high_water
        return WriteAck(self.node_id, rep.slice, rep.persistent_lsn, throttle, rep.last_seq)

    def _ingest(self, rep: SliceReplica, frag: LogFragment, offset: int) -> None:
        fills_hole = frag.covers_from < rep.coverage.max
        for r in frag.records:
            rep.records[r.lsn] = r
            hist = rep.history(r.page)
            bisect.insort(hist.records, r.lsn)
            if r.lsn > hist.consolidated:
                rep.pending += 1
        rep.coverage.add(frag.covers_from, frag.covers_to)
        rep.last_seq = max(rep.last_seq, frag.sequence)
        if frag.records:
            cf = CachedFragment(self.log_cache.new_key(), rep.slice, offset, frag)
            self.log_cache.admit(cf, priority=fills_hole)

    # read path

    def read_page(self, slice_id: SliceId, page: int, lsn: int) -> PageImage:
        rep = self._replica(slice_id)
        if not rep.serving:
            raise NotCaughtUp(f"{self.node_id}: slice {slice_id} is still being rebuilt")
        if lsn < rep.recycle_lsn:
            raise BelowRecycleLsn(f"lsn {lsn} below recycle lsn {rep.recycle_lsn}")
        if lsn < rep.base_lsn:
            raise NotCaughtUp(f"{self.node_id}: history below {rep.base_lsn} not held")
        if rep.persistent_lsn < lsn:
            raise NotCaughtUp(f"{self.node_id}: persistent lsn {rep.persistent_lsn} < {lsn}")
        return self._materialize(rep, page, lsn)

    def _latest_image(self, rep: SliceReplica, page: int, hist: PageHistory) -> PageImage:
        image = self.pool.get((rep.slice, page))
        if image is not None:
            return image
        if hist.versions:
            return self._read_version(rep, page, hist, hist.versions[-1])
        return PageImage.zero(page, self.config.page_size)

    def _read_version(self, rep: SliceReplica, page: int, hist: PageHistory, version: int) -> PageImage:
        offset, index = hist.locations[version]
        path = self._path(rep.slice)
        _, length = _BLOCK_HEAD.unpack(self.fs.read(path, offset, _BLOCK_HEAD.size))
        raw = self.fs.read(path, offset, _BLOCK_HEAD.size + length + 4)
        block, _ = slicelog.decode_block(raw, 0, rep.slice)
        if isinstance(block, slicelog.BaseBlock):
            return block.pages[index]
        return block

    def _materialize(self, rep: SliceReplica, page: int, lsn: int) -> PageImage:
        hist = rep.pages.get(page)
        if hist is None:
            self.pool.misses += 1
            return PageImage.zero(page, self.config.page_size)
        pooled = self.pool.peek((rep.slice, page))
        i = bisect.bisect_right(hist.versions, lsn)
        disk_version = hist.versions[i - 1] if i else None
        if pooled is not None and pooled.version <= lsn and (disk_version is None or pooled.version >= disk_version):
            image = self.pool.get((rep.slice, page))
        else:
            self.pool.misses += 1
            if disk_version is not None:
                image = self._read_version(rep, page, hist, disk_version)
                if disk_version == hist.consolidated and pooled is None:
                    # the newest consolidated image is worth keeping
                    self.pool.put((rep.slice, page), image)
            else:
                image = PageImage.zero(page, self.config.page_size)
        j = bisect.bisect_right(hist.records, image.version)
        k = bisect.bisect_right(hist.records, lsn)
        for rec_lsn in hist.records[j:k]:
            if not self.log_cache.is_resident(rep.slice, rec_lsn):
                self.metrics["readRecordFetches"] += 1
            image = apply_record(image, rep.records[rec_lsn])
        return image

    def get_persistent_lsn(self, slice_id: SliceId) -> int:
        return self._replica(slice_id).persistent_lsn

    def get_gap_ranges(self, slice_id: SliceId) -> list[tuple[int, int]]:
        return self._replica(slice_id).gap_ranges()

    def status(self, slice_id: SliceId) -> SliceStatus:
        rep = self._replica(slice_id)
        return SliceStatus(
            self.node_id,
            slice_id,
            rep.persistent_lsn,
            tuple(rep.gap_ranges()),
            rep.coverage.max,
            rep.last_seq,
            rep.floor,
            rep.serving,
        )

    # recycling

    def set_recycle_lsn(self, slice_id: SliceId, lsn: int) -> None:
        rep = self._replica(slice_id)
        if lsn < rep.recycle_lsn:
            raise RecycleLsnRegression(f"recycle lsn {lsn} below current {rep.recycle_lsn}")
        if lsn == rep.recycle_lsn:
            return
        self._append(slice_id, slicelog.encode_recycle_block(lsn))
        rep.recycle_lsn = lsn
        self._collect(rep)

    def _collect(self, rep: SliceReplica) -> None:
        """Forget versions and records no read at or above the recycle LSN needs."""
        limit = rep.recycle_lsn
        for hist in rep.pages.values():
            i = bisect.bisect_right(hist.versions, limit)
            if i == 0:
                continue
            anchor = hist.versions[i - 1]
            for v in hist.versions[: i - 1]:
                del hist.locations[v]
            del hist.versions[: i - 1]
            j = bisect.bisect_right(hist.records, anchor)
            for rec_lsn in hist.records[:j]:
                rep.records.pop(rec_lsn, None)
            del hist.records[:j]

    # consolidation

    def _arm_consolidation(self, backoff: float = 1.0) -> None:
        if self.env is None or self._consolidation_armed:
            return
        self._consolidation_armed = True
        self._timer(self.config.consolidation_delay_ms * backoff, self._consolidation_tick)

    def _consolidation_tick(self) -> None:
        self._consolidation_armed = False
        done = self.consolidate_step(self.config.consolidation_batch_pages)
        if not self.pending_records():
            return
        if done:
            self._arm_consolidation()
        elif self.log_cache.overflow:
            # everything resident is blocked; retry slowly, rotating the cache
            self._arm_consolidation(backoff=50.0)

    def consolidate_step(self, max_pages: int | None = None) -> int:
        if self.config.consolidation_policy == LOG_CACHE_CENTRIC:
            done = self._consolidate_cache_centric(max_pages)
            if done == 0 and self.log_cache.rotate():
                done = self._consolidate_cache_centric(max_pages)
            return done
        return self._consolidate_longest_chain(max_pages)

    def _consolidate_page(self, rep: SliceReplica, page: int, limit: int, resident_only: bool) -> int:
        hist = rep.pages[page]
        j = bisect.bisect_right(hist.records, hist.consolidated)
        k = bisect.bisect_right(hist.records, limit)
        if j >= k:
            return 0
        image = None
        applied = 0
        for rec_lsn in hist.records[j:k]:
            if not self.log_cache.is_resident(rep.slice, rec_lsn):
                if resident_only:
                    break
                self.metrics["diskRecordReads"] += 1
            if image is None:
                image = self._latest_image(rep, page, hist)
            image = apply_record(image, rep.records[rec_lsn])
            applied += 1
        if applied:
            hist.consolidated = image.version
            rep.pending -= applied
            self.pool.put((rep.slice, page), image, dirty=True)
            self.metrics["pagesConsolidated"] += 1
        return applied

    def _fragment_done(self, rep: SliceReplica | None, frag: LogFragment) -> bool:
        if rep is None:
            return True
        for r in frag.records:
            hist = rep.pages.get(r.page)
            if hist is not None and r.lsn > hist.consolidated and r.lsn in rep.records:
                return False
        return True

    def _consolidate_cache_centric(self, max_pages: int | None) -> int:
        pages_done = 0
        for key, cf in list(self.log_cache.resident.items()):
            rep = self.slices.get(cf.slice)
            if rep is not None:
                limit = rep.persistent_lsn
                seen = set()
                for r in cf.fragment.records:
                    if r.page in seen or r.lsn > limit:
                        continue
                    seen.add(r.page)
                    if self._consolidate_page(rep, r.page, limit, resident_only=True):
                        pages_done += 1
            if self._fragment_done(rep, cf.fragment):
                self.log_cache.release(key)
            if max_pages is not None and pages_done >= max_pages:
                break
        self.log_cache.refill()
        return pages_done

    def _consolidate_longest_chain(self, max_pages: int | None) -> int:
        chains = []
        for slice_id, rep in sorted(self.slices.items()):
            limit = rep.persistent_lsn
            for page, hist in rep.pages.items():
                j = bisect.bisect_right(hist.records, hist.consolidated)
                k = bisect.bisect_right(hist.records, limit)
                if k > j:
                    chains.append((-(k - j), slice_id, page))
        chains.sort()
        pages_done = 0
        for _, slice_id, page in chains[: max_pages or len(chains)]:
            rep = self.slices[slice_id]
            if self._consolidate_page(rep, page, rep.persistent_lsn, resident_only=False):
                pages_done += 1
        for key, cf in list(self.log_cache.resident.items()):
            if self._fragment_done(self.slices.get(cf.slice), cf.fragment):
                self.log_cache.release(key)
        return pages_done

    # flushing

    def _flush_page(self, key, image: PageImage) -> None:
        slice_id, page = key
        rep = self.slices.get(slice_id)
        if rep is None:
            return
        hist = rep.history(page)
        if image.version in hist.locations:
            return
        offset = self._append(slice_id, slicelog.encode_page_block(image))
        bisect.insort(hist.versions, image.version)
        hist.locations[image.version] = (offset, -1)
        self.metrics["pagesFlushed"] += 1

    def flush_dirty_pages(self) -> int:
        count = 0
        for key, image in self.pool.dirty_items():
            self._flush_page(key, image)
            self.pool.mark_clean(key, image.version)
            count += 1
        return count

    def _dirty_tick(self) -> None:
        self.flush_dirty_pages()
        self._timer(self.config.dirty_flush_interval_ms, self._dirty_tick)

    # gossip

    def gossip_summary(self, slice_id: SliceId) -> tuple[int, IntervalSet]:
        rep = self._replica(slice_id)
        return rep.floor, rep.coverage.copy()

    def _range_fragment(self, rep: SliceReplica, lo: int, hi: int) -> LogFragment:
        records = tuple(sorted((r for r in rep.records.values() if lo < r.lsn <= hi), key=lambda r: r.lsn))
        return LogFragment(rep.slice, 0, records, lo, hi, frozenset(r.lsn for r in records if r.group_end))

    def gossip_fetch(self, slice_id: SliceId, ranges: list[tuple[int, int]]) -> list[LogFragment]:
        rep = self._replica(slice_id)
        out = []
        for lo, hi in ranges:
            for a, b in rep.coverage.intersect(max(lo, rep.floor), hi):
                out.append(self._range_fragment(rep, a, b))
        return out

    def gossip_push(self, slice_id: SliceId, fragments: list[LogFragment]) -> int:
        before = len(self._replica(slice_id).records)
        for frag in fragments:
            self.write_logs(slice_id, frag)
        return len(self._replica(slice_id).records) - before

    def gossip_round(self, slice_id: SliceId, peer: str) -> int:
        """One bidirectional anti-entropy exchange; return records moved."""
        rep = self._replica(slice_id)
        try:
            peer_floor, peer_cov = self.rpc.call(self.node_id, peer, "gossip_summary", slice_id)
            moved = 0
            # only LSNs above a side's floor are backed by individual records
            give = []
            for lo, hi in rep.coverage.intersect(rep.floor, rep.coverage.max):
                give += peer_cov.missing(lo, hi)
            if give:
                frags = [self._range_fragment(rep, lo, hi) for lo, hi in give]
                self.rpc.call(self.node_id, peer, "gossip_push", slice_id, frags)
                moved += sum(len(f.records) for f in frags)
            want = []
            for lo, hi in peer_cov.intersect(max(peer_floor, rep.base_lsn), peer_cov.max):
                want += rep.coverage.missing(lo, hi)
            if want:
                frags = self.rpc.call(self.node_id, peer, "gossip_fetch", slice_id, want)
                for frag in frags:
                    self.write_logs(slice_id, frag)
                moved += sum(len(f.records) for f in frags)
        except RPC_ERRORS as err:
            raise PeerUnavailable(peer) from err
        self.metrics["gossipRecordsExchanged"] += moved
        if moved:
            self._trace("gossip_copy", slice_id, peer, self.node_id, moved)
        return moved

    def _gossip_tick(self) -> None:
        for slice_id in self.hosted():
            if slice_id in self.rebuilding:
                continue
            peers = [p for p in self.peers_of(slice_id) if p != self.node_id]
            if not peers:
                continue
            turn = self._gossip_turn.get(slice_id, 0)
            self._gossip_turn[slice_id] = turn + 1
            try:
                self.gossip_round(slice_id, peers[turn % len(peers)])
            except (PeerUnavailable, UnknownSlice):
                pass
        self._timer(self.config.gossip_interval_ms, self._gossip_tick)

    def gossip_now(self, slice_id: SliceId) -> int:
        """Accelerated round with every peer, requested by the SAL."""
        moved = 0
        for peer in [p for p in self.peers_of(slice_id) if p != self.node_id]:
            try:
                moved += self.gossip_round(slice_id, peer)
            except (PeerUnavailable, UnknownSlice):
                continue
        return moved

    # replacement replicas

    def copy_latest_pages(self, slice_id: SliceId) -> tuple[int, list[PageImage]]:
        """Source side of a rebuild: every page as of the persistent LSN."""
        rep = self._replica(slice_id)
        if not rep.serving:
            raise NotCaughtUp(f"{self.node_id} is itself rebuilding {slice_id}")
        upto = rep.persistent_lsn
        pages = []
        for page in sorted(rep.pages):
            image = self._materialize(rep, page, upto)
            if image.version:
                pages.append(image)
        return upto, pages

    def complete_rebuild(self, slice_id: SliceId, source: str) -> int:
        """Copy the latest pages from ``source``; return the base LSN."""
        rep = self._replica(slice_id)
        try:
            base_lsn, pages = self.rpc.call(self.node_id, source, "copy_latest_pages", slice_id)
        except (*RPC_ERRORS, PageStoreError) as err:
            raise SourceUnavailable(f"{source}: {err}") from err
        offset = self._append(slice_id, slicelog.encode_base_block(base_lsn, pages))
        self._apply_base(rep, base_lsn, pages, offset)
        rep.serving = True
        self.rebuilding.discard(slice_id)
        if rep.pending:
            self._arm_consolidation()
        return base_lsn

    def _apply_base(self, rep: SliceReplica, base_lsn: int, pages: Iterable[PageImage], offset: int) -> None:
        if base_lsn <= rep.base_lsn:
            return
        rep.base_lsn = base_lsn
        rep.coverage.add(0, base_lsn)
        for index, image in enumerate(pages):
            hist = rep.history(image.page)
            if image.version not in hist.locations:
                bisect.insort(hist.versions, image.version)
            hist.locations[image.version] = (offset, index)
        for page, hist in rep.pages.items():
            # the base images already fold in every record at or below base_lsn
            j = bisect.bisect_right(hist.records, base_lsn)
            for rec_lsn in hist.records[:j]:
                del rep.records[rec_lsn]
            del hist.records[:j]
            if hist.consolidated < base_lsn:
                self.pool.discard((rep.slice, page))
                hist.consolidated = hist.versions[-1] if hist.versions else 0
        rep.pending = _pending_count(rep)

    # failures

    def on_crash(self) -> None:
        self.up = False
        self.pool.clear()
        self.log_cache.clear()
        self._consolidation_armed = False

    def on_restart(self) -> None:
        self.up = True
        for slice_id in list(self.slices):
            self.slices[slice_id] = self.rebuild_from_log(slice_id)
        self.start()

    def rebuild_from_log(self, slice_id: SliceId) -> SliceReplica:
        """Reconstruct a slice replica by scanning its slice log."""
        rep = SliceReplica(slice_id, serving=slice_id not in self.rebuilding)
        self.slices[slice_id] = rep
        buf = self.fs.read_all(self._path(slice_id))
        fragments = []
        for offset, block in slicelog.scan_blocks(buf, slice_id):
            if isinstance(block, LogFragment):
                new = tuple(r for r in block.records if r.lsn > rep.base_lsn and r.lsn not in rep.records)
                for r in new:
                    rep.records[r.lsn] = r
                    bisect.insort(rep.history(r.page).records, r.lsn)
                rep.coverage.add(max(block.covers_from, rep.base_lsn), max(block.covers_to, rep.base_lsn))
                rep.last_seq = max(rep.last_seq, block.sequence)
                fragments.append((offset, block))
            elif isinstance(block, PageImage):
                hist = rep.history(block.page)
                if block.version not in hist.locations:
                    bisect.insort(hist.versions, block.version)
                hist.locations[block.version] = (offset, -1)
            elif isinstance(block, slicelog.BaseBlock):
                self._apply_base(rep, block.base_lsn, block.pages, offset)
            elif isinstance(block, slicelog.RecycleBlock):
                rep.recycle_lsn = max(rep.recycle_lsn, block.lsn)
        for hist in rep.pages.values():
            hist.consolidated = hist.versions[-1] if hist.versions else 0
        self._collect(rep)
        rep.pending = _pending_count(rep)
        for offset, frag in fragments:
            live = tuple(r for r in frag.records if r.lsn in rep.records and r.lsn > rep.pages[r.page].consolidated)
            if live:
                cf = CachedFragment(self.log_cache.new_key(), slice_id, offset, frag)
                self.log_cache.admit(cf)
        return rep


def _pending_count(rep: SliceReplica) -> int:
    return sum(len(h.records) - bisect.bisect_right(h.records, h.consolidated) for h in rep.pages.values())
