"""Read replicas: physical consistency over a stream of master messages.

A replica learns where new log lives from numbered master messages, reads
those bytes from the Log Stores, and applies whole record groups to the
pages it caches. Its visible LSN only ever lands on a group boundary and
never passes what the Page Stores are known to hold, so any page it
fetches at a pinned view is consistent with the pages it already has.
"""

from __future__ import annotations

import bisect
import struct
import zlib
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

from .core import LogRecord, PageImage, SliceId, apply_record, decode_log_record, page_to_slice
from .logstore import AllReplicasUnavailable, Extent, LogStoreClient, PLogId, UnknownPLog
from .rpc import RPC_ERRORS

MESSAGE_MAGIC = 0x4D4D5254  # "TRMM"
MESSAGE_VERSION = 1
_MSG_HEAD = struct.Struct("<IHI")
_MSG_BODY = struct.Struct("<QQdI")
_MSG_EXTENT = struct.Struct("<32sQIQQ")
_MSG_CHANGE = struct.Struct("<IIB")
_MSG_PERSIST = struct.Struct("<IIQ")
_U32 = struct.Struct("<I")
_CRC = struct.Struct("<I")


class ReplicaError(Exception):
    pass


class UnknownTvLsn(ReplicaError, KeyError):
    pass


class BadMessage(ReplicaError, ValueError):
    pass


class GroupBoundaryViolation(AssertionError):
    pass


@dataclass(frozen=True)
class MasterMessage:
    seq: int
    extents: tuple[Extent, ...] = ()
    slice_changes: tuple[tuple[SliceId, bool], ...] = ()  # (slice, added)
    slice_persistent: tuple[tuple[SliceId, int], ...] = ()
    last_db_lsn: int = 0
    sent_at: float = 0.0


def encode_master_message(msg: MasterMessage) -> bytes:
    parts = [_MSG_BODY.pack(msg.seq, msg.last_db_lsn, msg.sent_at, len(msg.extents))]
    for e in msg.extents:
        parts.append(_MSG_EXTENT.pack(e.plog_id.encode(), e.offset, e.length, e.min_lsn, e.max_lsn))
    parts.append(_U32.pack(len(msg.slice_changes)))
    parts += [_MSG_CHANGE.pack(s.database, s.index, int(added)) for s, added in msg.slice_changes]
    parts.append(_U32.pack(len(msg.slice_persistent)))
    parts += [_MSG_PERSIST.pack(s.database, s.index, lsn) for s, lsn in msg.slice_persistent]
    body = b"".join(parts)
    head = _MSG_HEAD.pack(MESSAGE_MAGIC, MESSAGE_VERSION, len(body))
    return head + body + _CRC.pack(zlib.crc32(head + body))


def decode_master_message(buf: bytes) -> MasterMessage:
    if len(buf) < _MSG_HEAD.size + _CRC.size:
        raise BadMessage("short master message")
    magic, version, length = _MSG_HEAD.unpack_from(buf)
    if magic != MESSAGE_MAGIC or version != MESSAGE_VERSION:
        raise BadMessage(f"unexpected header {magic:#x} v{version}")
    end = _MSG_HEAD.size + length
    if len(buf) != end + _CRC.size or zlib.crc32(buf[:end]) != _CRC.unpack_from(buf, end)[0]:
        raise BadMessage("master message checksum mismatch")
    pos = _MSG_HEAD.size
    seq, last, sent_at, n = _MSG_BODY.unpack_from(buf, pos)
    pos += _MSG_BODY.size
    extents = []
    for _ in range(n):
        pid, off, ln, lo, hi = _MSG_EXTENT.unpack_from(buf, pos)
        pos += _MSG_EXTENT.size
        extents.append(Extent(PLogId(pid.decode()), off, ln, lo, hi))
    (n,) = _U32.unpack_from(buf, pos)
    pos += _U32.size
    changes = []
    for _ in range(n):
        db, idx, added = _MSG_CHANGE.unpack_from(buf, pos)
        pos += _MSG_CHANGE.size
        changes.append((SliceId(db, idx), bool(added)))
    (n,) = _U32.unpack_from(buf, pos)
    pos += _U32.size
    persist = []
    for _ in range(n):
        db, idx, lsn = _MSG_PERSIST.unpack_from(buf, pos)
        pos += _MSG_PERSIST.size
        persist.append((SliceId(db, idx), lsn))
    return MasterMessage(seq, tuple(extents), tuple(changes), tuple(persist), last, sent_at)


class MasterPublisher:
    """Master side: numbers and broadcasts log locations to read replicas."""

    def __init__(self, sal, net, subscribers: list[str] | None = None):
        self.sal = sal
        self.net = net
        self.subscribers = list(subscribers or [])
        self.seq = 0
        self._known_slices: set[SliceId] = set()

    def _slice_changes(self) -> tuple[tuple[SliceId, bool], ...]:
        current = set(self.sal.slices)
        added = sorted(current - self._known_slices)
        removed = sorted(self._known_slices - current)
        self._known_slices = current
        return tuple((s, True) for s in added) + tuple((s, False) for s in removed)

    def _publish(self, extents: tuple[Extent, ...]) -> None:
        self.seq += 1
        msg = MasterMessage(
            self.seq,
            extents,
            self._slice_changes(),
            tuple(self.sal.known_slice_persistent().items()),
            self.sal.durable_lsn,
            self.sal.env.now,
        )
        data = encode_master_message(msg)
        for node in self.subscribers:
            self.net.send(self.sal.node_id, node, "ingest_master_message", data)

    def on_buffer(self, extent: Extent, records) -> None:
        self._publish((extent,))

    def on_tick(self) -> None:
        self._publish(())

    def snapshot(self) -> bytes:
        """Registration and resync data: slice list, persistent map, log position."""
        msg = MasterMessage(
            self.seq,
            (),
            tuple((s, True) for s in sorted(self.sal.slices)),
            tuple(self.sal.known_slice_persistent().items()),
            self.sal.durable_lsn,
            self.sal.env.now,
        )
        return encode_master_message(msg)


@dataclass
class PooledPage:
    versions: list[PageImage]  # ascending by version
    known_from: int  # every record of the page above this LSN is applied


@dataclass
class ReplicaState:
    visible_lsn: int = 0
    applied_lsn: int = 0
    position: int = 0  # log position of the last resync
    last_seq: int = 0
    known_persistent: dict[SliceId, int] = field(default_factory=dict)
    boundaries: list[int] = field(default_factory=list)
    tv: Counter = field(default_factory=Counter)


class ReadReplica:
    def __init__(self, node_id: str, config, env, net, client: LogStoreClient, router, master: str = "master"):
        self.node_id = node_id
        self.config = config
        self.env = env
        self.net = net
        self.client = client
        self.router = router
        self.master = master
        self.state = ReplicaState()
        self.pool: OrderedDict[int, PooledPage] = OrderedDict()
        self.queue: list[Extent] = []
        self.partial: list[LogRecord] = []  # records of the group being assembled
        self.last_seen: dict[int, int] = {}
        self.commit_times: list[tuple[int, float]] = []
        self.metrics = {"resyncs": 0, "poolHits": 0, "pageStoreReads": 0, "groupsApplied": 0, "replicaLagMs": 0.0}
        self.lag_samples: list[float] = []
        self.registered = False

    def _timer(self, delay: float, fn, *args) -> None:
        self.env.set_timer(self.node_id, delay, fn, *args)

    def start(self) -> None:
        self.resync()
        self._timer(self.config.replica_pump_ms, self._pump_tick)

    def on_crash(self) -> None:
        self.registered = False

    def on_restart(self) -> None:
        self.pool.clear()
        self.start()

    # master messages

    def resync(self) -> bool:
        try:
            data = self.net.call(self.node_id, self.master, "replica_snapshot")
        except RPC_ERRORS:
            self.registered = False
            return False
        msg = decode_master_message(data)
        st = self.state
        self.metrics["resyncs"] += 1
        self.pool.clear()
        self.queue.clear()
        self.partial.clear()
        self.last_seen.clear()
        st.last_seq = msg.seq
        st.position = max(st.position, msg.last_db_lsn)
        st.applied_lsn = max(st.applied_lsn, msg.last_db_lsn)
        if msg.last_db_lsn and (not st.boundaries or st.boundaries[-1] < msg.last_db_lsn):
            st.boundaries.append(msg.last_db_lsn)
        self._ingest_persistent(msg)
        self.registered = True
        self._advance_visible()
        return True

    def ingest_master_message(self, data: bytes) -> str:
        msg = decode_master_message(data)
        st = self.state
        if not self.registered:
            return "ignored"
        if msg.seq <= st.last_seq:
            return "duplicate"
        if msg.seq != st.last_seq + 1:
            self.resync()
            return "resync"
        st.last_seq = msg.seq
        for extent in msg.extents:
            if extent.max_lsn > st.position:
                self.queue.append(extent)
                self.commit_times.append((extent.max_lsn, msg.sent_at))
        self._ingest_persistent(msg)
        self._advance_visible()
        return "applied"

    def _ingest_persistent(self, msg: MasterMessage) -> None:
        known = self.state.known_persistent
        for s, added in msg.slice_changes:
            if added:
                known.setdefault(s, 0)
            else:
                known.pop(s, None)
        for s, lsn in msg.slice_persistent:
            if s in known:
                known[s] = max(known[s], lsn)

    # log application

    def _pump_tick(self) -> None:
        if not self.registered:
            self.resync()
        self.pump_log()
        self._timer(self.config.replica_pump_ms, self._pump_tick)

    def pump_log(self) -> int:
        st = self.state
        while self.queue:
            extent = self.queue[0]
            try:
                data = self.client.read(extent.plog_id, extent.offset, extent.length)
            except (AllReplicasUnavailable, UnknownPLog):
                break
            self.queue.pop(0)
            pos = 0
            while pos < len(data):
                rec, used = decode_log_record(data, pos)
                pos += used
                if rec.lsn <= st.applied_lsn:
                    continue
                self.partial.append(rec)
                if rec.group_end:
                    self._apply_group(self.partial)
                    self.partial = []
        return self._advance_visible()

    def _apply_group(self, group: list[LogRecord]) -> None:
        st = self.state
        for rec in group:
            self.last_seen[rec.page] = rec.lsn
            entry = self.pool.get(rec.page)
            if entry is not None:
                entry.versions.append(apply_record(entry.versions[-1], rec))
        end = group[-1].lsn
        st.applied_lsn = end
        st.boundaries.append(end)
        self.metrics["groupsApplied"] += 1
        self._prune()

    def visibility_limit(self) -> int:
        known = self.state.known_persistent
        return min(known.values()) if known else 0

    def _advance_visible(self) -> int:
        st = self.state
        limit = min(st.applied_lsn, self.visibility_limit())
        i = bisect.bisect_right(st.boundaries, limit)
        if i:
            target = st.boundaries[i - 1]
            if target > st.visible_lsn:
                st.visible_lsn = target
                self._record_lag()
        self.check_invariants()
        return st.visible_lsn

    def _record_lag(self) -> None:
        now = self.env.now
        while self.commit_times and self.commit_times[0][0] <= self.state.visible_lsn:
            _, sent = self.commit_times.pop(0)
            self.lag_samples.append(now - sent)
        if self.lag_samples:
            self.metrics["replicaLagMs"] = sum(self.lag_samples) / len(self.lag_samples)

    def check_invariants(self) -> None:
        st = self.state
        if st.visible_lsn and st.visible_lsn not in st.boundaries:
            raise GroupBoundaryViolation(f"visible {st.visible_lsn} is not a group boundary")
        if st.known_persistent and st.visible_lsn > self.visibility_limit():
            raise GroupBoundaryViolation(f"visible {st.visible_lsn} passes slice persistent {self.visibility_limit()}")

    def _prune(self) -> None:
        floor = self.min_tv()
        for entry in self.pool.values():
            vs = entry.versions
            i = bisect.bisect_right([v.version for v in vs], floor)
            if i > 1:
                del vs[: i - 1]

    # read views

    def open_read_view(self) -> int:
        tv = self.state.visible_lsn
        self.state.tv[tv] += 1
        return tv

    def release_read_view(self, tv: int) -> None:
        reg = self.state.tv
        if reg[tv] <= 0:
            raise UnknownTvLsn(tv)
        reg[tv] -= 1
        if reg[tv] == 0:
            del reg[tv]

    def min_tv(self) -> int:
        reg = self.state.tv
        return min(reg) if reg else self.state.visible_lsn

    def report_min_tv(self) -> int:
        return self.min_tv()

    def replica_read_page(self, page: int, tv: int) -> PageImage:
        if self.state.tv[tv] <= 0:
            self.state.tv.pop(tv, None)
            raise UnknownTvLsn(tv)
        entry = self.pool.get(page)
        if entry is not None and entry.known_from <= tv <= self.state.applied_lsn:
            versions = [v.version for v in entry.versions]
            i = bisect.bisect_right(versions, tv)
            if i:
                self.pool.move_to_end(page)
                self.metrics["poolHits"] += 1
                return entry.versions[i - 1]
        slice_id = page_to_slice(page, self.config.pages_per_slice, self.config.database)
        image = self.router.read(slice_id, page, tv)
        self.metrics["pageStoreReads"] += 1
        if entry is None and tv >= self.state.position and self.last_seen.get(page, 0) <= tv:
            self._pool_put(page, PooledPage([image], tv))
        return image

    def _pool_put(self, page: int, entry: PooledPage) -> None:
        cap = self.config.replica_pool_pages
        if cap <= 0:
            return
        while len(self.pool) >= cap:
            self.pool.popitem(last=False)
        self.pool[page] = entry


def compute_recycle_lsn(current: int, driver_floor: int, replica_minima: list[int]) -> int:
    """Global minimum of pinned LSNs, never moving backwards."""
    candidate = min([driver_floor, *replica_minima])
    return max(current, candidate)
