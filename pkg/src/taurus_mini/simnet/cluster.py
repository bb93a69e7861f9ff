"""Cluster manager: liveness monitoring, failure classification, placement.

The manager pings every storage node each heartbeat interval. A node that
misses enough heartbeats is detected as a short-term failure; if it stays
unreachable past the long-term threshold it is decommissioned. Log Store
PLog replicas are then re-created from survivors, and Page Store slice
replicas are reassigned and rebuilt from a peer. A failed node keeps
counting toward durability until its data has been re-created elsewhere.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..config import Config
from ..core import SliceId
from ..logstore import FailureClass, LogStoreCluster, LogStoreNode, ReplicaSourceLost
from ..pagestore.node import PageStoreError, PageStoreNode, SourceUnavailable
from ..rpc import RPC_ERRORS
from .engine import Network, Simulation

CM = "cm"


def _node_order(node: str) -> tuple[str, int]:
    head = node.rstrip("0123456789")
    tail = node[len(head):]
    return head, int(tail) if tail else -1


class NoCandidateNode(Exception):
    pass


@dataclass(frozen=True)
class FailureClassification:
    node: str
    failure: FailureClass
    detected_at: float
    classified_at: float


@dataclass
class Liveness:
    misses: int = 0
    down_since: float | None = None
    detected_at: float | None = None
    long_term: bool = False


class ClusterManager:
    def __init__(
        self,
        sim: Simulation,
        net: Network,
        config: Config,
        log_stores: dict[str, LogStoreNode],
        page_stores: dict[str, PageStoreNode],
        rng: random.Random,
    ):
        self.sim = sim
        self.net = net
        self.config = config
        self.rng = rng
        self.log_stores = log_stores
        self.page_stores = page_stores
        self.placement: dict[SliceId, list[str]] = {}
        self.liveness = {n: Liveness() for n in sorted([*log_stores, *page_stores])}
        self.classifications: list[FailureClassification] = []
        self.retiring: dict[str, set[SliceId]] = {}
        self.retired: set[str] = set()  # data re-created elsewhere; no longer counted
        self.errors: list[str] = []
        self.rebuilds_completed = 0
        self.on_retired = None  # callback(node) for auditors
        self.ls = LogStoreCluster(
            log_stores,
            rpc=net,
            rng=rng,
            healthy=self.is_healthy,
            plog_size_limit=config.plog_size_limit,
            metadata_size_limit=config.metadata_plog_size_limit,
        )

    # membership

    def is_healthy(self, node: str) -> bool:
        live = self.liveness.get(node)
        return node not in self.sim.removed and (live is None or live.detected_at is None)

    def peers_of(self, slice_id: SliceId) -> list[str]:
        return list(self.placement.get(slice_id, ()))

    def _ps_load(self, node: str) -> int:
        return sum(node in nodes for nodes in self.placement.values())

    def _pick(self, candidates: list[str]) -> str:
        pool = sorted(candidates)
        self.rng.shuffle(pool)
        pool.sort(key=self._ps_load)
        return pool[0]

    def assign_slices(self, slices: list[SliceId], replicas: int = 3) -> None:
        """Initial placement: slice k starts at the (k*replicas)-th node, round-robin."""
        names = sorted((n for n in self.page_stores if self.is_healthy(n)), key=_node_order)
        if len(names) < replicas:
            raise NoCandidateNode(f"cannot place {replicas} replicas on {len(names)} nodes")
        for k, slice_id in enumerate(slices):
            chosen = [names[(k * replicas + j) % len(names)] for j in range(replicas)]
            self.placement[slice_id] = chosen
            for node in chosen:
                self.page_stores[node].host_slice(slice_id)

    def add_pagestore(self, node: PageStoreNode) -> None:
        self.page_stores[node.node_id] = node
        self.liveness.setdefault(node.node_id, Liveness())

    # monitoring

    def start(self) -> None:
        self.sim.set_timer(CM, self.config.heartbeat_ms, self._heartbeat)

    def _heartbeat(self) -> None:
        now = self.sim.now
        for node, live in self.liveness.items():
            if node in self.sim.removed or live.long_term:
                continue
            if self.net.reachable(CM, node):
                if live.detected_at is not None:
                    self.sim.trace.log(now, "recovered", node, "short_term")
                    if node in self.log_stores:
                        self.ls.apply_tombstones(node, CM)
                live.misses, live.down_since, live.detected_at = 0, None, None
                continue
            live.misses += 1
            if live.down_since is None:
                live.down_since = now
            if live.detected_at is None and live.misses >= self.config.missed_heartbeats:
                live.detected_at = now
                self.classifications.append(FailureClassification(node, FailureClass.SHORT_TERM, now, now))
                self.sim.trace.log(now, "classify", node, "short_term")
            if live.detected_at is not None and now - live.down_since >= self.config.long_term_threshold_ms:
                live.long_term = True
                self.classifications.append(FailureClassification(node, FailureClass.LONG_TERM, live.detected_at, now))
                self.sim.trace.log(now, "classify", node, "long_term")
                self._handle_long_term(node)
        self.sim.set_timer(CM, self.config.heartbeat_ms, self._heartbeat)

    def classify_failures(self) -> list[FailureClassification]:
        return list(self.classifications)

    def _handle_long_term(self, node: str) -> None:
        self.sim.remove(node)
        if node in self.log_stores:
            try:
                self.ls.recover_node(node, FailureClass.LONG_TERM, CM)
            except ReplicaSourceLost as err:
                self.errors.append(str(err))
                self.sim.trace.log(self.sim.now, "replica_source_lost", node)
            self._retire(node)
            return
        slices = [s for s, nodes in sorted(self.placement.items()) if node in nodes]
        self.retiring[node] = set(slices)
        if not slices:
            self._retire(node)
        for slice_id in slices:
            self._replace(slice_id, node)

    def _retire(self, node: str) -> None:
        self.retired.add(node)
        self.retiring.pop(node, None)
        self.sim.trace.log(self.sim.now, "retired", node)
        if self.on_retired is not None:
            self.on_retired(node)

    # replacement

    def replace_pagestore_replica(self, slice_id: SliceId, failed: str) -> str:
        nodes = self.placement[slice_id]
        tried: set[str] = set()
        while True:
            cands = [
                n
                for n in self.page_stores
                if n not in nodes and n not in tried and self.is_healthy(n) and self.net.reachable(CM, n)
            ]
            if not cands:
                raise NoCandidateNode(f"no node can host {slice_id}")
            new = self._pick(cands)
            tried.add(new)
            try:
                self.net.call(CM, new, "host_slice", slice_id, True)
            except RPC_ERRORS:
                continue
            nodes[nodes.index(failed)] = new
            self.sim.trace.log(self.sim.now, "replace", slice_id, failed, new)
            return new

    def _replace(self, slice_id: SliceId, failed: str) -> None:
        try:
            new = self.replace_pagestore_replica(slice_id, failed)
        except NoCandidateNode:
            self.sim.set_timer(CM, self.config.replacement_retry_ms, self._replace, slice_id, failed)
            return
        self.sim.set_timer(CM, self.config.rebuild_copy_ms, self._rebuild, slice_id, new, failed)

    def _rebuild(self, slice_id: SliceId, new: str, failed: str) -> None:
        nodes = self.placement[slice_id]
        if new not in nodes:
            return  # the replacement itself was replaced
        sources = [n for n in nodes if n != new]
        self.rng.shuffle(sources)
        for src in sources:
            try:
                base = self.net.call(CM, new, "complete_rebuild", slice_id, src)
            except SourceUnavailable:
                continue
            except (*RPC_ERRORS, PageStoreError):
                break
            self.rebuilds_completed += 1
            self.sim.trace.log(self.sim.now, "rebuilt", slice_id, new, src, base)
            pending = self.retiring.get(failed)
            if pending is not None:
                pending.discard(slice_id)
                if not pending:
                    self._retire(failed)
            return
        self.sim.set_timer(CM, self.config.replacement_retry_ms, self._rebuild, slice_id, new, failed)
