"""Storage Abstraction Layer: the master-side log router.

The SAL writes each database log buffer to the Log Stores first, and only
after the append is acknowledged splits its records into per-slice buffers
that are shipped to the slice's Page Stores. It tracks the LSN frontiers
(CV-LSN, per-slice flush LSNs, replica persistent LSNs, database persistent
LSN), truncates the log, notices records that no replica has, and performs
redo recovery after a master crash.

Every fragment sent to a slice vouches for an LSN interval ``(from, to]``:
all records of the slice in that interval are included. Each slice's
intervals chain end to end, so a replica's covered prefix is exactly its
persistent LSN.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .config import Config
from .core import (
    DatabaseLogBuffer,
    LogFragment,
    LogRecord,
    PageImage,
    SliceId,
    decode_log_record,
    encode_log_record,
    page_to_slice,
)
from .logstore import (
    AllReplicasUnavailable,
    ChainEntry,
    Extent,
    LogStoreClient,
    LogWriter,
    MetadataRecord,
    PLog,
    PLogId,
    UnknownPLog,
)
from .pagestore.intervals import IntervalSet
from .pagestore.node import PageStoreError, SliceStatus, WriteAck
from .rpc import RPC_ERRORS


class SalError(Exception):
    pass


class SliceUnrecoverable(SalError):
    pass


class RecordsUnrecoverable(SalError, AssertionError):
    pass


class MetadataUnreadable(SalError):
    pass


class LogUnavailable(SalError):
    pass


READ_RETRY_ERRORS = (PageStoreError, *RPC_ERRORS)


class PageRouter:
    """Orders a slice's replicas by observed latency (EWMA, seeded ties)."""

    def __init__(self, net, caller: str, placement: dict[SliceId, list[str]], rng: random.Random, alpha: float = 0.3):
        self.net = net
        self.caller = caller
        self.placement = placement
        self.rng = rng
        self.alpha = alpha
        self.latency: dict[str, float] = {}
        self.attempts = 0

    def order(self, slice_id: SliceId) -> list[str]:
        nodes = list(self.placement[slice_id])
        self.rng.shuffle(nodes)
        return sorted(nodes, key=lambda n: self.latency.get(n, 0.0))

    def observe(self, node: str, rtt: float) -> None:
        old = self.latency.get(node)
        self.latency[node] = rtt if old is None else (1 - self.alpha) * old + self.alpha * rtt

    def penalize(self, node: str) -> None:
        self.observe(node, self.latency.get(node, 1.0) * 4 + 10.0)

    def read(self, slice_id: SliceId, page: int, lsn: int) -> PageImage:
        """Try replicas best-first; raise the last error if none can serve."""
        last: Exception | None = None
        for node in self.order(slice_id):
            self.attempts += 1
            try:
                image = self.net.call(self.caller, node, "read_page", slice_id, page, lsn)
            except READ_RETRY_ERRORS as err:
                if isinstance(err, RPC_ERRORS):
                    self.penalize(node)
                last = err
                continue
            self.observe(node, getattr(self.net, "last_rtt", 1.0))
            return image
        raise SliceUnrecoverable(f"no replica of {slice_id} served page {page} at {lsn}: {last}")


@dataclass
class BufferEntry:
    last_lsn: int
    extent: Extent
    waiting: set[SliceId] = field(default_factory=set)


@dataclass
class Inflight:
    fragment: LogFragment
    buffers: list[BufferEntry]
    sent_at: float


@dataclass
class Slot:
    node: str
    persistent: int = 0
    high: int = 0
    high_node: str = ""
    stale: int = 0
    last_polled: int = -1
    status: SliceStatus | None = None
    throttle: bool = False


@dataclass
class SliceState:
    slice: SliceId
    flush_lsn: int = 0  # highest record LSN acknowledged by some replica
    sent_to: int = 0  # coverage end already shipped
    max_record_lsn: int = 0
    next_seq: int = 1
    pending: list[LogRecord] = field(default_factory=list)
    pending_bytes: int = 0
    waiting_buffers: list[BufferEntry] = field(default_factory=list)
    inflight: dict[int, Inflight] = field(default_factory=dict)
    slots: list[Slot] = field(default_factory=list)
    last_flush: float = 0.0


class SAL:
    def __init__(
        self,
        node_id: str,
        config: Config,
        env,
        net,
        client: LogStoreClient,
        placement: dict[SliceId, list[str]],
        rng: random.Random | None = None,
    ):
        self.node_id = node_id
        self.config = config
        self.env = env
        self.net = net
        self.client = client
        self.placement = placement
        self.rng = rng or random.Random(0)
        self.router = PageRouter(net, node_id, placement, self.rng, config.latency_ewma_alpha)
        self.writer = LogWriter(client, on_roll=self._on_roll, database=config.database)
        self.slices: dict[SliceId, SliceState] = {}
        self.chain: list[PLogId] = []
        self.extents: list[Extent] = []  # ascending by max_lsn
        self.outstanding: list[BufferEntry] = []
        self.cv_lsn = 0
        self.durable_lsn = 0
        self.db_persistent_lsn = 0
        self.log_floor = 0  # records at or below this may have been truncated
        self.epoch = 0
        self.buffers_since_checkpoint = 0
        self.recycle_lsn = 0
        self.publisher = None
        self.metrics = {"resentRecords": 0, "truncatedPLogs": 0, "mechanismA": 0, "mechanismB": 0, "gossipTriggers": 0}
        self._flush_armed = False
        self._retry_armed = False
        self._meta_dirty = False
        self.recovered_from: int | None = None
        for slice_id in sorted(placement):
            self._state(slice_id)

    # plumbing

    def _timer(self, delay: float, fn, *args) -> None:
        self.env.set_timer(self.node_id, delay, fn, *args)

    def _trace(self, kind: str, *fields) -> None:
        trace = getattr(self.env, "trace", None)
        if trace is not None:
            trace.log(self.env.now, kind, *fields)

    def start(self) -> None:
        self._timer(self.config.poll_interval_ms, self._poll_tick)

    def _state(self, slice_id: SliceId) -> SliceState:
        st = self.slices.get(slice_id)
        if st is None:
            st = self.slices[slice_id] = SliceState(slice_id)
        nodes = self.placement.get(slice_id, [])
        while len(st.slots) < len(nodes):
            st.slots.append(Slot(nodes[len(st.slots)]))
        for slot, node in zip(st.slots, nodes):
            if slot.node != node:
                # replica replaced: the slot's history stays for mechanism A
                slot.node = node
                slot.persistent = 0
                slot.stale = 0
                slot.last_polled = -1
                slot.status = None
                slot.throttle = False
        return st

    def slice_of(self, page: int) -> SliceId:
        return page_to_slice(page, self.config.pages_per_slice, self.config.database)

    @property
    def throttled(self) -> bool:
        return any(slot.throttle for st in self.slices.values() for slot in st.slots)

    def flush_lsn(self, slice_id: SliceId) -> int:
        return self._state(slice_id).flush_lsn

    def known_slice_persistent(self) -> dict[SliceId, int]:
        return {s: max((sl.persistent for sl in st.slots), default=0) for s, st in sorted(self.slices.items())}

    # write path

    def write_log_buffer(self, buffer: DatabaseLogBuffer) -> Extent:
        """Make ``buffer`` durable in the Log Stores, then queue it for Page Stores."""
        records = buffer.records
        if records[0].lsn <= self.durable_lsn:
            raise ValueError(f"buffer starts at {records[0].lsn}, log already durable to {self.durable_lsn}")
        if self._meta_dirty:
            # the chain must name the active PLog before anything lands in it
            self.write_metadata()
        payload = b"".join(encode_log_record(r) for r in records)
        extent = self.writer.write(payload, records[0].lsn, buffer.last_lsn)
        self.extents.append(extent)
        self.durable_lsn = buffer.last_lsn
        entry = BufferEntry(buffer.last_lsn, extent)
        for r in records:
            st = self._state(r.slice)
            st.pending.append(r)
            st.pending_bytes += len(r.op.data)
            st.max_record_lsn = max(st.max_record_lsn, r.lsn)
            if r.slice not in entry.waiting:
                entry.waiting.add(r.slice)
                st.waiting_buffers.append(entry)
        self.outstanding.append(entry)
        for slice_id in sorted(entry.waiting):
            if self.slices[slice_id].pending_bytes >= self.config.slice_buffer_bytes:
                self.flush_slice_buffer(slice_id)
        self._arm_flush()
        self.buffers_since_checkpoint += 1
        if self.buffers_since_checkpoint >= self.config.checkpoint_every_buffers:
            self.checkpoint()
        if self.publisher is not None:
            self.publisher.on_buffer(extent, records)
        return extent

    def _arm_flush(self) -> None:
        if not self._flush_armed:
            self._flush_armed = True
            self._timer(self.config.slice_flush_timeout_ms, self._flush_tick)

    def _flush_tick(self) -> None:
        self._flush_armed = False
        now = self.env.now
        for slice_id, st in sorted(self.slices.items()):
            if st.pending:
                self.flush_slice_buffer(slice_id)
            elif st.sent_to < self.durable_lsn and now - st.last_flush >= self.config.idle_coverage_ms:
                self.flush_slice_buffer(slice_id)
        if any(st.pending or st.sent_to < self.durable_lsn for st in self.slices.values()):
            self._arm_flush()

    def flush_slice_buffer(self, slice_id: SliceId) -> LogFragment | None:
        st = self._state(slice_id)
        if not st.pending and st.sent_to >= self.durable_lsn:
            return None
        records = tuple(st.pending)
        frag = LogFragment(
            slice_id,
            st.next_seq,
            records,
            st.sent_to,
            self.durable_lsn,
            frozenset(r.lsn for r in records if r.group_end),
        )
        st.next_seq += 1
        st.sent_to = self.durable_lsn
        st.pending = []
        st.pending_bytes = 0
        st.last_flush = self.env.now
        inflight = Inflight(frag, st.waiting_buffers, self.env.now)
        st.waiting_buffers = []
        st.inflight[frag.sequence] = inflight
        self._send_fragment(slice_id, frag)
        self._arm_retry()
        return frag

    def _send_fragment(self, slice_id: SliceId, frag: LogFragment, nodes: Iterable[str] | None = None) -> None:
        for node in nodes if nodes is not None else list(self.placement[slice_id]):
            self.net.send(
                self.node_id,
                node,
                "write_logs",
                slice_id,
                frag,
                on_reply=lambda result, s=slice_id, q=frag.sequence: self._on_write_ack(s, q, result),
            )

    def _on_write_ack(self, slice_id: SliceId, seq: int, result) -> None:
        if not isinstance(result, WriteAck):
            return
        self._observe(slice_id, result.node, result.persistent_lsn, result.throttle)
        st = self.slices[slice_id]
        inflight = st.inflight.pop(seq, None) if seq else None
        if inflight is not None:
            st.flush_lsn = max(st.flush_lsn, inflight.fragment.last_lsn)
            for entry in inflight.buffers:
                entry.waiting.discard(slice_id)
            self.advance_cv_lsn()
        self.track_persistent_lsns()

    def _arm_retry(self) -> None:
        if not self._retry_armed:
            self._retry_armed = True
            self._timer(self.config.fragment_retry_ms, self._retry_tick)

    def _retry_tick(self) -> None:
        self._retry_armed = False
        now = self.env.now
        for slice_id, st in sorted(self.slices.items()):
            for seq, inflight in sorted(st.inflight.items()):
                if now - inflight.sent_at >= self.config.fragment_retry_ms:
                    inflight.sent_at = now
                    self._send_fragment(slice_id, inflight.fragment)
        if any(st.inflight for st in self.slices.values()):
            self._arm_retry()

    def advance_cv_lsn(self) -> int:
        while self.outstanding and not self.outstanding[0].waiting:
            self.cv_lsn = self.outstanding.pop(0).last_lsn
        return self.cv_lsn

    # persistent LSN tracking

    def _observe(self, slice_id: SliceId, node: str, persistent: int, throttle: bool = False) -> None:
        st = self._state(slice_id)
        for slot in st.slots:
            if slot.node != node:
                continue
            slot.throttle = throttle
            if persistent >= slot.high:
                slot.high, slot.high_node = persistent, node
            elif node != slot.high_node:
                # a new replica in this slot reports less than its predecessor had
                self.metrics["mechanismA"] += 1
                self._trace("persistent_drop", slice_id, node, slot.high, persistent)
                slot.high, slot.high_node = persistent, node
                slot.persistent = max(slot.persistent, persistent)
                lo = min(s.persistent for s in st.slots)
                self._repair_ranges(slice_id, [(max(lo, self.log_floor), st.sent_to)], list(self.placement[slice_id]))
            slot.persistent = max(slot.persistent, persistent)

    def fully_replicated(self, slice_id: SliceId) -> bool:
        st = self._state(slice_id)
        return min((s.persistent for s in st.slots), default=0) >= st.max_record_lsn

    def track_persistent_lsns(self) -> int:
        laggards = [st for s, st in self.slices.items() if not self.fully_replicated(s)]
        if laggards:
            value = min(min(sl.persistent for sl in st.slots) for st in laggards)
        else:
            value = self.durable_lsn
        self.db_persistent_lsn = max(self.db_persistent_lsn, min(value, self.durable_lsn))
        return self.db_persistent_lsn

    def eviction_permitted(self, page: int, last_record_lsn: int, dirty: bool = True) -> bool:
        if not dirty:
            return True
        st = self._state(self.slice_of(page))
        return last_record_lsn <= max((s.persistent for s in st.slots), default=0)

    def _poll_tick(self) -> None:
        for slice_id in sorted(self.slices):
            st = self._state(slice_id)
            for slot in st.slots:
                self.net.send(
                    self.node_id,
                    slot.node,
                    "status",
                    slice_id,
                    on_reply=lambda result, s=slice_id: self._on_status(s, result),
                )
            self._check_stale(slice_id)
        self.track_persistent_lsns()
        if self.publisher is not None:
            self.publisher.on_tick()
        self._timer(self.config.poll_interval_ms, self._poll_tick)

    def _on_status(self, slice_id: SliceId, result) -> None:
        if not isinstance(result, SliceStatus):
            return
        st = self._state(slice_id)
        for slot in st.slots:
            if slot.node == result.node:
                slot.status = result
        self._observe(slice_id, result.node, result.persistent_lsn)

    def _check_stale(self, slice_id: SliceId) -> None:
        st = self.slices[slice_id]
        for slot in st.slots:
            if slot.persistent < st.sent_to and slot.persistent == slot.last_polled:
                slot.stale += 1
            elif slot.persistent >= st.sent_to:
                slot.stale = 0
            slot.last_polled = slot.persistent
        if any(slot.stale >= self.config.stale_polls for slot in st.slots):
            for slot in st.slots:
                slot.stale = 0
            self.detect_and_repair_missing(slice_id)

    # repair

    def _statuses(self, slice_id: SliceId) -> tuple[dict[str, SliceStatus], list[str]]:
        fresh: dict[str, SliceStatus] = {}
        st = self._state(slice_id)
        for slot in st.slots:
            try:
                status = self.net.call(self.node_id, slot.node, "status", slice_id)
            except (*RPC_ERRORS, PageStoreError):
                continue
            slot.status = status
            fresh[slot.node] = status
            self._observe(slice_id, slot.node, status.persistent_lsn)
        return fresh, [n for n in self.placement[slice_id] if n in fresh]

    def detect_and_repair_missing(self, slice_id: SliceId) -> int:
        """Mechanism B: find LSN ranges no reachable replica has and resend them."""
        self.metrics["mechanismB"] += 1
        self._trace("stall_detected", slice_id)
        st = self._state(slice_id)
        statuses, reachable = self._statuses(slice_id)
        if not reachable:
            return 0
        missing = [statuses[n].missing(st.sent_to) for n in reachable]
        everywhere = missing[0]
        for m in missing[1:]:
            everywhere = _intersection(everywhere, m)
        ranges = [(lo, hi) for lo, hi in everywhere if hi > self.log_floor]
        sent = self._repair_ranges(slice_id, [(max(lo, self.log_floor), hi) for lo, hi in ranges], reachable)
        partial = any(len(m) for m in missing) and any(_difference(m, everywhere) for m in missing)
        if partial and self.config.sal_triggers_gossip:
            for node in reachable:
                if _difference(statuses[node].missing(st.sent_to), everywhere):
                    self.metrics["gossipTriggers"] += 1
                    self.net.send(self.node_id, node, "gossip_now", slice_id)
        return sent

    def _repair_ranges(self, slice_id: SliceId, ranges: list[tuple[int, int]], nodes: list[str], sync: bool = False) -> int:
        sent = 0
        for lo, hi in ranges:
            if hi <= lo:
                continue
            if lo < self.log_floor:
                raise RecordsUnrecoverable(f"{slice_id}: ({lo}, {hi}] partly truncated below {self.log_floor}")
            try:
                records = self.log_records(slice_id, lo, hi)
            except LogUnavailable:
                continue
            frag = LogFragment(slice_id, 0, records, lo, hi, frozenset(r.lsn for r in records if r.group_end))
            sent += len(records)
            self._trace("resend", slice_id, lo, hi, ",".join(str(r.lsn) for r in records) or "-", ",".join(nodes))
            for node in nodes:
                if sync:
                    try:
                        ack = self.net.call(self.node_id, node, "write_logs", slice_id, frag)
                        self._observe(slice_id, ack.node, ack.persistent_lsn, ack.throttle)
                    except (*RPC_ERRORS, PageStoreError):
                        pass
                else:
                    self._send_fragment(slice_id, frag, [node])
        self.metrics["resentRecords"] += sent
        return sent

    def log_records(self, slice_id: SliceId | None, lo: int, hi: int) -> tuple[LogRecord, ...]:
        """Records of ``slice_id`` (or all slices) in ``(lo, hi]`` read back from the Log Stores."""
        out = []
        i = bisect.bisect_right([e.max_lsn for e in self.extents], lo)
        for extent in self.extents[i:]:
            if extent.min_lsn > hi:
                break
            try:
                data = self.client.read(extent.plog_id, extent.offset, extent.length)
            except (AllReplicasUnavailable, UnknownPLog) as err:
                raise LogUnavailable(str(err)) from err
            pos = 0
            while pos < len(data):
                rec, used = decode_log_record(data, pos)
                pos += used
                if lo < rec.lsn <= hi and (slice_id is None or rec.slice == slice_id):
                    out.append(rec)
        out.sort(key=lambda r: r.lsn)
        return tuple(out)

    # reads

    def read_page_routed(self, page: int, lsn: int | None = None) -> PageImage:
        slice_id = self.slice_of(page)
        st = self._state(slice_id)
        at = st.flush_lsn if lsn is None else lsn
        try:
            return self.router.read(slice_id, page, at)
        except SliceUnrecoverable:
            pass
        self.repair_from_logstore(slice_id, at)
        return self.router.read(slice_id, page, at)

    def repair_from_logstore(self, slice_id: SliceId, upto: int) -> int:
        st = self._state(slice_id)
        statuses, reachable = self._statuses(slice_id)
        sent = 0
        for node in reachable:
            need = statuses[node].missing(max(upto, st.sent_to))
            ranges = [(max(lo, self.log_floor), hi) for lo, hi in need if hi > self.log_floor]
            sent += self._repair_ranges(slice_id, ranges, [node], sync=True)
        return sent

    # log maintenance

    def _on_roll(self, plog: PLog) -> None:
        self.chain.append(plog.id)
        self.write_metadata()

    def _chain_entries(self) -> tuple[ChainEntry, ...]:
        out = []
        for plog_id in self.chain:
            plog = self.client.cluster.plogs.get(plog_id)
            if plog is not None:
                out.append(ChainEntry(plog_id, plog.min_lsn, plog.max_lsn))
        return tuple(out)

    def write_metadata(self) -> None:
        self._meta_dirty = True
        self.epoch += 1
        record = MetadataRecord(self._chain_entries(), self.db_persistent_lsn, self.epoch)
        self.client.write_metadata(record, self.config.database)
        self._meta_dirty = False

    def checkpoint(self) -> None:
        self.track_persistent_lsns()
        self.buffers_since_checkpoint = 0
        self.write_metadata()

    def truncate(self) -> int:
        """Delete sealed data PLogs whose records all precede the database persistent LSN."""
        dbp = self.track_persistent_lsns()
        active = self.writer.active.id if self.writer.active is not None else None
        victims = []
        for plog_id in self.chain:
            plog = self.client.cluster.plogs.get(plog_id)
            if plog is None or plog_id == active:
                continue
            if plog.sealed and plog.max_lsn < dbp:
                victims.append(plog)
        if not victims:
            return 0
        for plog in victims:
            try:
                self.client.delete_plog(plog.id)
            except UnknownPLog:
                pass
            self.log_floor = max(self.log_floor, plog.max_lsn)
        gone = {p.id for p in victims}
        self.chain = [p for p in self.chain if p not in gone]
        self.extents = [e for e in self.extents if e.plog_id not in gone]
        self.write_metadata()
        self.metrics["truncatedPLogs"] += len(victims)
        return len(victims)

    def issue_recycle(self, lsn: int) -> None:
        if lsn <= self.recycle_lsn:
            return
        self.recycle_lsn = lsn
        for slice_id in sorted(self.slices):
            for node in self.placement[slice_id]:
                self.net.send(self.node_id, node, "set_recycle_lsn", slice_id, lsn)

    # recovery

    def recover(self) -> int:
        """Redo recovery for a fresh SAL; return the number of records resent."""
        try:
            meta = self.client.read_latest_metadata(self.config.database)
        except (AllReplicasUnavailable, UnknownPLog) as err:
            raise MetadataUnreadable(str(err)) from err
        if meta is None:
            return 0
        self.epoch = meta.epoch
        checkpoint = meta.db_persistent_lsn
        self.recovered_from = checkpoint
        self.db_persistent_lsn = checkpoint
        self.chain = [e.plog_id for e in meta.chain if e.plog_id in self.client.cluster.plogs]
        scanned: list[LogRecord] = []
        for plog_id in self.chain:
            plog = self.client.cluster.plogs[plog_id]
            if plog.length == 0:
                continue
            try:
                data = self.client.read(plog_id, 0, plog.length)
            except AllReplicasUnavailable as err:
                raise MetadataUnreadable(f"data PLog {plog_id} unreadable") from err
            pos = 0
            lo = hi = 0
            while pos < len(data):
                rec, used = decode_log_record(data, pos)
                pos += used
                lo = rec.lsn if lo == 0 else min(lo, rec.lsn)
                hi = max(hi, rec.lsn)
                scanned.append(rec)
            self.extents.append(Extent(plog_id, 0, plog.length, lo, hi))
        self.extents.sort(key=lambda e: e.max_lsn)
        self.log_floor = min((e.min_lsn for e in self.extents), default=checkpoint + 1) - 1
        self.log_floor = min(self.log_floor, checkpoint)
        durable = max([checkpoint] + [r.lsn for r in scanned])
        self.durable_lsn = self.cv_lsn = durable
        by_slice: dict[SliceId, list[LogRecord]] = {}
        for rec in scanned:
            by_slice.setdefault(rec.slice, []).append(rec)
        resent = 0
        for slice_id in sorted(self.placement):
            st = self._state(slice_id)
            records = sorted(by_slice.get(slice_id, []), key=lambda r: r.lsn)
            st.max_record_lsn = records[-1].lsn if records else 0
            st.sent_to = durable
            st.flush_lsn = max(st.max_record_lsn, checkpoint)
            statuses, reachable = self._statuses(slice_id)
            if not reachable:
                continue
            st.next_seq = max(statuses[n].last_seq for n in reachable) + 1
            # the old recycle LSN died with the master; no replica serves below its floor
            self.recycle_lsn = max(self.recycle_lsn, max(statuses[n].floor for n in reachable))
            # holes at or below the checkpoint hold no records of this slice
            below = [n for n in reachable if statuses[n].persistent_lsn < checkpoint]
            if below:
                frag = LogFragment(slice_id, 0, (), 0, checkpoint)
                for node in below:
                    self._call_write(slice_id, node, frag)
            missing = [statuses[n].missing(durable) for n in reachable]
            everywhere = missing[0]
            for m in missing[1:]:
                everywhere = _intersection(everywhere, m)
            for lo, hi in everywhere.intersect(checkpoint, durable):
                recs = tuple(r for r in records if lo < r.lsn <= hi)
                frag = LogFragment(slice_id, 0, recs, lo, hi, frozenset(r.lsn for r in recs if r.group_end))
                resent += len(recs)
                for node in reachable:
                    self._call_write(slice_id, node, frag)
            if any(_difference(m, everywhere) for m in missing) and self.config.sal_triggers_gossip:
                for node in reachable:
                    self.net.send(self.node_id, node, "gossip_now", slice_id)
        self.metrics["resentRecords"] += resent
        self.writer.active = None
        self.write_metadata()
        self.track_persistent_lsns()
        return resent

    def _call_write(self, slice_id: SliceId, node: str, frag: LogFragment) -> None:
        try:
            ack = self.net.call(self.node_id, node, "write_logs", slice_id, frag)
        except (*RPC_ERRORS, PageStoreError):
            return
        self._observe(slice_id, ack.node, ack.persistent_lsn, ack.throttle)


def _intersection(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    out = IntervalSet()
    for lo, hi in a:
        for x, y in b.intersect(lo, hi):
            out.add(x, y)
    return out


def _difference(a: IntervalSet, b: IntervalSet) -> list[tuple[int, int]]:
    out = []
    for lo, hi in a:
        out += b.missing(lo, hi)
    return out
