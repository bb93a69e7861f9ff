"""Replicated append-only log objects (PLogs).

A PLog lives on three Log Store nodes. Appends are synchronous to all three
replicas; any failure seals the PLog for good and the writer moves on to a
fresh PLog on other nodes. A per-database metadata PLog holds the ordered
chain of data PLogs plus the last checkpointed database persistent LSN.
"""

from __future__ import annotations

import enum
import random
import struct
import zlib
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, NewType

from .rpc import RPC_ERRORS, LocalRpc
from .storage import AppendOnlyFS

PLogId = NewType("PLogId", str)

REPLICATION = 3


class LogStoreError(Exception):
    pass


class InsufficientHealthyNodes(LogStoreError):
    pass


class PLogSealed(LogStoreError):
    pass


class SizeLimitExceeded(LogStoreError):
    pass


class UnknownPLog(LogStoreError, KeyError):
    pass


class AllReplicasUnavailable(LogStoreError):
    pass


class ReplicaSourceLost(LogStoreError):
    pass


class AppendFailed(LogStoreError):
    """One or more replicas did not acknowledge; the PLog is now sealed."""

    def __init__(self, plog_id: PLogId, failed: Iterable[str]):
        self.plog_id = plog_id
        self.failed = tuple(failed)
        super().__init__(f"append to {plog_id} failed on {', '.join(self.failed)}")


class ReplicaOffsetMismatch(LogStoreError):
    pass


class PLogState(enum.Enum):
    OPEN = "open"
    SEALED = "sealed"


class PLogKind(enum.Enum):
    DATA = "data"
    METADATA = "metadata"


class FailureClass(enum.Enum):
    SHORT_TERM = "short"
    LONG_TERM = "long"


@dataclass
class PLog:
    id: PLogId
    replicas: tuple[str, ...]
    kind: PLogKind
    database: int = 0
    state: PLogState = PLogState.OPEN
    length: int = 0
    min_lsn: int = 0
    max_lsn: int = 0

    @property
    def sealed(self) -> bool:
        return self.state is PLogState.SEALED


def plog_path(node_id: str, plog_id: PLogId) -> str:
    return f"{node_id}/{plog_id}.plog"


class FifoCache:
    """Byte cache of recent appends, evicted strictly in insertion order."""

    def __init__(self, capacity_bytes: int):
        self.capacity = capacity_bytes
        self.size = 0
        self._order: deque[tuple[PLogId, int, int]] = deque()
        # plog -> (sorted chunk offsets, offset -> bytes)
        self._chunks: dict[PLogId, tuple[list[int], dict[int, bytes]]] = {}

    def put(self, plog_id: PLogId, offset: int, data: bytes) -> None:
        if len(data) > self.capacity:
            return
        offsets, chunks = self._chunks.setdefault(plog_id, ([], {}))
        offsets.append(offset)  # appends arrive in offset order
        chunks[offset] = bytes(data)
        self._order.append((plog_id, offset, len(data)))
        self.size += len(data)
        while self.size > self.capacity:
            self._evict_oldest()

    def _evict_oldest(self) -> None:
        plog_id, offset, length = self._order.popleft()
        self.size -= length
        entry = self._chunks.get(plog_id)
        if entry is None or offset not in entry[1]:
            return
        offsets, chunks = entry
        del chunks[offset]
        offsets.remove(offset)
        if not offsets:
            del self._chunks[plog_id]

    def get(self, plog_id: PLogId, offset: int, length: int) -> bytes | None:
        entry = self._chunks.get(plog_id)
        if entry is None:
            return None
        offsets, chunks = entry
        i = bisect_right(offsets, offset) - 1
        if i < 0:
            return None
        out = bytearray()
        pos, end = offset, offset + length
        while pos < end:
            if i >= len(offsets):
                return None
            start = offsets[i]
            chunk = chunks[start]
            if not start <= pos < start + len(chunk):
                return None
            take = min(end, start + len(chunk)) - pos
            out += chunk[pos - start : pos - start + take]
            pos += take
            i += 1
        return bytes(out)

    def drop(self, plog_id: PLogId) -> None:
        entry = self._chunks.pop(plog_id, None)
        if entry is not None:
            self.size -= sum(len(c) for c in entry[1].values())
            self._order = deque(e for e in self._order if e[0] != plog_id)

    def clear(self) -> None:
        self._order.clear()
        self._chunks.clear()
        self.size = 0


class LogStoreNode:
    """One Log Store server: replica files plus the FIFO read cache."""

    def __init__(self, node_id: str, fs: AppendOnlyFS | None = None, cache_bytes: int = 1 << 20):
        self.node_id = node_id
        self.fs = fs if fs is not None else AppendOnlyFS()
        self.cache = FifoCache(cache_bytes)
        self.cache_hits = 0
        self.disk_reads = 0
        self.recovery_reads = 0
        self.bytes_stored = 0

    def _path(self, plog_id: PLogId) -> str:
        return plog_path(self.node_id, plog_id)

    def has_replica(self, plog_id: PLogId) -> bool:
        return self.fs.exists(self._path(plog_id))

    def replica_length(self, plog_id: PLogId) -> int:
        path = self._path(plog_id)
        return self.fs.size(path) if self.fs.exists(path) else -1

    def append_replica(self, plog_id: PLogId, offset: int, data: bytes) -> int:
        path = self._path(plog_id)
        current = self.fs.size(path) if self.fs.exists(path) else 0
        if current != offset:
            raise ReplicaOffsetMismatch(f"{path}: expected offset {current}, got {offset}")
        self.fs.append(path, data)
        self.bytes_stored += len(data)
        self.cache.put(plog_id, offset, data)
        return offset + len(data)

    def read_replica(self, plog_id: PLogId, offset: int, length: int) -> bytes:
        cached = self.cache.get(plog_id, offset, length)
        if cached is not None:
            self.cache_hits += 1
            return cached
        self.disk_reads += 1
        return self.fs.read(self._path(plog_id), offset, length)

    def copy_out(self, plog_id: PLogId, length: int) -> bytes:
        """Bulk read used by re-replication; bypasses the cache counters."""
        self.recovery_reads += 1
        return self.fs.read(self._path(plog_id), 0, length)

    def delete_replica(self, plog_id: PLogId) -> bool:
        self.cache.drop(plog_id)
        path = self._path(plog_id)
        if self.fs.exists(path):
            self.bytes_stored -= self.fs.size(path)
            self.fs.delete(path)
            return True
        return False

    def on_crash(self) -> None:
        self.cache.clear()

    def on_restart(self) -> None:
        pass


def choose_replicas(candidates: Iterable[str], load: Callable[[str], int], rng: random.Random, k: int = REPLICATION) -> tuple[str, ...]:
    """The ``k`` least-loaded candidates; equal loads are ordered by ``rng``."""
    pool = sorted(candidates)
    rng.shuffle(pool)
    pool.sort(key=load)
    if len(pool) < k:
        raise InsufficientHealthyNodes(f"{len(pool)} healthy Log Stores, need {k}")
    return tuple(pool[:k])


class LogStoreCluster:
    """Cluster-manager side of the Log Store service.

    Holds the PLog registry (which nodes host which PLog, acknowledged
    length, state), the per-database metadata PLog pointer, tombstones for
    replicas that could not be deleted, and the placement policy.
    """

    def __init__(
        self,
        nodes: dict[str, LogStoreNode],
        rpc=None,
        rng: random.Random | None = None,
        healthy: Callable[[str], bool] | None = None,
        plog_size_limit: int = 64 * 1024,
        metadata_size_limit: int = 16 * 1024,
    ):
        self.nodes = nodes
        self.rpc = rpc if rpc is not None else LocalRpc(dict(nodes))
        self.rng = rng or random.Random(0)
        self.healthy = healthy or (lambda node: True)
        self.plog_size_limit = plog_size_limit
        self.metadata_size_limit = metadata_size_limit
        self.plogs: dict[PLogId, PLog] = {}
        self.metadata_pointer: dict[int, PLogId] = {}
        self.tombstones: dict[str, list[PLogId]] = {}
        self.removed: set[str] = set()
        self.retired: set[PLogId] = set()
        self.bytes_moved = 0
        self._ids = 0

    # placement

    def _new_id(self) -> PLogId:
        self._ids += 1
        return PLogId(f"{self.rng.getrandbits(64):016x}{self._ids:016x}")

    def load(self, node_id: str) -> int:
        return self.nodes[node_id].bytes_stored

    def healthy_nodes(self, exclude: Iterable[str] = ()) -> list[str]:
        skip = set(exclude) | self.removed
        return [n for n in sorted(self.nodes) if n not in skip and self.healthy(n)]

    def create_plog(self, kind: PLogKind = PLogKind.DATA, exclude: Iterable[str] = (), database: int = 0) -> PLog:
        replicas = choose_replicas(self.healthy_nodes(exclude), self.load, self.rng)
        plog = PLog(self._new_id(), replicas, kind, database)
        self.plogs[plog.id] = plog
        return plog

    def size_limit(self, plog: PLog) -> int:
        return self.metadata_size_limit if plog.kind is PLogKind.METADATA else self.plog_size_limit

    def get(self, plog_id: PLogId) -> PLog:
        try:
            return self.plogs[plog_id]
        except KeyError:
            raise UnknownPLog(plog_id) from None

    # replica bookkeeping

    def apply_tombstones(self, node_id: str, caller: str = "cm") -> int:
        done = 0
        for plog_id in self.tombstones.pop(node_id, []):
            try:
                self.rpc.call(caller, node_id, "delete_replica", plog_id)
                done += 1
            except RPC_ERRORS:
                self.tombstones.setdefault(node_id, []).append(plog_id)
        return done

    def recover_node(self, node_id: str, failure: FailureClass, caller: str = "cm") -> int:
        """Handle a classified Log Store failure; return bytes re-replicated."""
        if failure is FailureClass.SHORT_TERM:
            return 0
        self.removed.add(node_id)
        self.tombstones.pop(node_id, None)
        moved = 0
        lost = []
        for plog in [p for p in self.plogs.values() if node_id in p.replicas]:
            plog.state = PLogState.SEALED
            survivors = [r for r in plog.replicas if r != node_id]
            data = None
            for src in survivors:
                if src in self.removed:
                    continue
                try:
                    data = self.rpc.call(caller, src, "copy_out", plog.id, plog.length)
                    break
                except RPC_ERRORS:
                    continue
            if data is None:
                lost.append(plog.id)
                continue
            exclude = set(plog.replicas)
            target = choose_replicas(self.healthy_nodes(exclude), self.load, self.rng, k=1)[0]
            if data:
                self.rpc.call(caller, target, "append_replica", plog.id, 0, data)
            plog.replicas = tuple(target if r == node_id else r for r in plog.replicas)
            moved += len(data)
        self.bytes_moved += moved
        if lost:
            raise ReplicaSourceLost(f"no reachable copy of {', '.join(lost)}")
        return moved


@dataclass(frozen=True)
class Extent:
    plog_id: PLogId
    offset: int
    length: int
    min_lsn: int = 0
    max_lsn: int = 0


class LogStoreClient:
    """Caller-side API: append/seal/read/delete plus metadata records."""

    def __init__(self, cluster: LogStoreCluster, caller: str = "sal", rpc=None):
        self.cluster = cluster
        self.caller = caller
        self.rpc = rpc if rpc is not None else cluster.rpc
        self.appends = 0
        self.failed_appends = 0

    def create_plog(self, kind: PLogKind = PLogKind.DATA, exclude: Iterable[str] = (), database: int = 0) -> PLog:
        return self.cluster.create_plog(kind, exclude, database)

    def append(self, plog_id: PLogId, payload: bytes, lsn_range: tuple[int, int] | None = None) -> int:
        plog = self.cluster.get(plog_id)
        if not payload:
            raise ValueError("empty append")
        if plog.sealed:
            raise PLogSealed(plog_id)
        if plog.length + len(payload) > self.cluster.size_limit(plog):
            raise SizeLimitExceeded(f"{plog_id}: {plog.length} + {len(payload)} bytes")
        failed = []
        for node in plog.replicas:
            try:
                self.rpc.call(self.caller, node, "append_replica", plog_id, plog.length, payload)
            except (*RPC_ERRORS, ReplicaOffsetMismatch):
                failed.append(node)
        self.appends += 1
        if failed:
            self.failed_appends += 1
            plog.state = PLogState.SEALED
            raise AppendFailed(plog_id, failed)
        offset = plog.length
        plog.length += len(payload)
        if lsn_range is not None:
            lo, hi = lsn_range
            plog.min_lsn = lo if plog.min_lsn == 0 else min(plog.min_lsn, lo)
            plog.max_lsn = max(plog.max_lsn, hi)
        return offset

    def seal(self, plog_id: PLogId) -> None:
        self.cluster.get(plog_id).state = PLogState.SEALED

    def read(self, plog_id: PLogId, offset: int, length: int) -> bytes:
        plog = self.cluster.get(plog_id)
        if offset < 0 or offset + length > plog.length:
            raise ValueError(f"read [{offset}, {offset + length}) beyond acked length {plog.length}")
        for node in plog.replicas:
            if node in self.cluster.removed:
                continue
            try:
                return self.rpc.call(self.caller, node, "read_replica", plog_id, offset, length)
            except RPC_ERRORS:
                continue
        raise AllReplicasUnavailable(plog_id)

    def delete_plog(self, plog_id: PLogId) -> None:
        plog = self.cluster.plogs.pop(plog_id, None)
        if plog is None:
            raise UnknownPLog(plog_id)
        self.cluster.retired.add(plog_id)
        for node in plog.replicas:
            try:
                self.rpc.call(self.caller, node, "delete_replica", plog_id)
            except RPC_ERRORS:
                self.cluster.tombstones.setdefault(node, []).append(plog_id)

    # metadata

    def write_metadata(self, record: "MetadataRecord", database: int = 0) -> PLogId:
        """Append one metadata record; roll to a fresh metadata PLog when needed."""
        payload = encode_metadata(record)
        pointer = self.cluster.metadata_pointer.get(database)
        if pointer is not None:
            try:
                self.append(pointer, payload)
                return pointer
            except (PLogSealed, SizeLimitExceeded, AppendFailed, UnknownPLog):
                pass
        exclude: set[str] = set()
        while True:
            fresh = self.create_plog(PLogKind.METADATA, exclude, database)
            try:
                self.append(fresh.id, payload)
                break
            except AppendFailed as err:
                exclude.update(err.failed)
        self.cluster.metadata_pointer[database] = fresh.id
        if pointer is not None and pointer in self.cluster.plogs:
            self.delete_plog(pointer)
        return fresh.id

    def read_latest_metadata(self, database: int = 0) -> "MetadataRecord | None":
        pointer = self.cluster.metadata_pointer.get(database)
        if pointer is None:
            return None
        plog = self.cluster.get(pointer)
        if plog.length == 0:
            return None
        records = scan_metadata(self.read(pointer, 0, plog.length))
        return records[-1] if records else None


class LogWriter:
    """Writes payloads to an active data PLog, rolling over on any failure.

    ``on_roll`` runs after each new PLog is created (the SAL records the new
    chain in the metadata PLog there). Nodes that failed an append are
    excluded from placement for the rest of that write.
    """

    def __init__(self, client: LogStoreClient, on_roll: Callable[[PLog], None] | None = None, database: int = 0):
        self.client = client
        self.on_roll = on_roll
        self.database = database
        self.active: PLog | None = None
        self.rollovers = 0

    def write(self, payload: bytes, min_lsn: int, max_lsn: int, max_attempts: int | None = None) -> Extent:
        limit = self.client.cluster.plog_size_limit
        if len(payload) > limit:
            raise SizeLimitExceeded(f"payload of {len(payload)} bytes exceeds the {limit}-byte PLog limit")
        exclude: set[str] = set()
        attempts = 0
        while True:
            if self.active is None or self.active.sealed or self.active.id not in self.client.cluster.plogs:
                self.active = self.client.create_plog(PLogKind.DATA, exclude, self.database)
                self.rollovers += 1
                if self.on_roll is not None:
                    self.on_roll(self.active)
            attempts += 1
            try:
                offset = self.client.append(self.active.id, payload, (min_lsn, max_lsn))
                return Extent(self.active.id, offset, len(payload), min_lsn, max_lsn)
            except SizeLimitExceeded:
                self.client.seal(self.active.id)
            except AppendFailed as err:
                exclude.update(err.failed)
            except PLogSealed:
                pass
            self.active = None
            if max_attempts is not None and attempts >= max_attempts:
                raise InsufficientHealthyNodes(f"no successful append after {attempts} attempts")


# metadata record encoding: "TRMD" u32, body length u32, body, crc32 u32
METADATA_MAGIC = 0x444D5254
_META_HEAD = struct.Struct("<II")
_META_BODY = struct.Struct("<QQI")
_META_ENTRY = struct.Struct("<32sQQ")


@dataclass(frozen=True)
class ChainEntry:
    plog_id: PLogId
    min_lsn: int
    max_lsn: int


@dataclass(frozen=True)
class MetadataRecord:
    chain: tuple[ChainEntry, ...]
    db_persistent_lsn: int
    epoch: int

    def __post_init__(self):
        for a, b in zip(self.chain, self.chain[1:]):
            if a.max_lsn and b.min_lsn and b.min_lsn <= a.max_lsn:
                raise ValueError("metadata chain entries overlap")


def encode_metadata(record: MetadataRecord) -> bytes:
    body = bytearray(_META_BODY.pack(record.epoch, record.db_persistent_lsn, len(record.chain)))
    for entry in record.chain:
        body += _META_ENTRY.pack(entry.plog_id.encode(), entry.min_lsn, entry.max_lsn)
    head = _META_HEAD.pack(METADATA_MAGIC, len(body))
    return head + bytes(body) + struct.pack("<I", zlib.crc32(head + body))


def scan_metadata(buf: bytes) -> list[MetadataRecord]:
    """Decode records front to back, stopping at the first torn or bad one."""
    out = []
    pos = 0
    while pos + _META_HEAD.size <= len(buf):
        magic, length = _META_HEAD.unpack_from(buf, pos)
        end = pos + _META_HEAD.size + length + 4
        if magic != METADATA_MAGIC or end > len(buf):
            break
        (crc,) = struct.unpack_from("<I", buf, end - 4)
        if zlib.crc32(buf[pos : end - 4]) != crc:
            break
        body = buf[pos + _META_HEAD.size : end - 4]
        epoch, dbp, count = _META_BODY.unpack_from(body)
        chain = []
        for i in range(count):
            raw, lo, hi = _META_ENTRY.unpack_from(body, _META_BODY.size + i * _META_ENTRY.size)
            chain.append(ChainEntry(PLogId(raw.rstrip(b"\0").decode()), lo, hi))
        out.append(MetadataRecord(tuple(chain), dbp, epoch))
        pos = end
    return out
