"""Deterministic discrete-event simulator and simulated network.

Time is in milliseconds. Events are ordered by ``(time, sequence)`` so two
runs with the same seed produce the same trace. Events bound to a node are
dropped while the node is crashed and postponed while it hangs; timers
also carry the node's incarnation so that work armed before a crash never
fires after the restart.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from ..logstore import LogStoreError
from ..pagestore.node import PageStoreError
from ..rpc import NodeUnavailable, RpcTimeout

# Application errors a handler may raise; they travel back to the caller.
REMOTE_ERRORS = (LogStoreError, PageStoreError)


@dataclass(order=True)
class Event:
    time: float
    seq: int
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    node: str | None = field(compare=False, default=None)
    incarnation: int | None = field(compare=False, default=None)


class Trace:
    def __init__(self, keep: bool = True):
        self.keep = keep
        self.lines: list[str] = []
        self._hash = hashlib.sha256()
        self.count = 0

    def log(self, time: float, kind: str, *fields: Any) -> None:
        line = f"{time:.3f} {kind} " + " ".join(str(f) for f in fields)
        self._hash.update(line.encode() + b"\n")
        self.count += 1
        if self.keep:
            self.lines.append(line)

    def digest(self) -> str:
        return self._hash.hexdigest()


class Simulation:
    def __init__(self, seed: int = 0, keep_trace: bool = True):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self.trace = Trace(keep_trace)
        self.actors: dict[str, Any] = {}
        self.events_run = 0
        self._heap: list[Event] = []
        self._seq = 0
        self._incarnation: dict[str, int] = {}
        self._crash_depth: dict[str, int] = {}
        self._hung_until: dict[str, float] = {}
        self.removed: set[str] = set()
        self.partitions: dict[frozenset, int] = {}
        self.drop_next: dict[tuple[str, str | None], int] = {}

    # actors and faults

    def add_actor(self, node_id: str, actor: Any) -> None:
        self.actors[node_id] = actor
        self._incarnation.setdefault(node_id, 0)

    def incarnation(self, node_id: str) -> int:
        return self._incarnation.get(node_id, 0)

    def is_crashed(self, node_id: str) -> bool:
        return self._crash_depth.get(node_id, 0) > 0 or node_id in self.removed

    def is_hung(self, node_id: str) -> bool:
        return self._hung_until.get(node_id, -1.0) > self.now

    def is_up(self, node_id: str) -> bool:
        return node_id in self.actors and not self.is_crashed(node_id)

    def crash(self, node_id: str, duration: float | None = None) -> None:
        depth = self._crash_depth.get(node_id, 0)
        self._crash_depth[node_id] = depth + 1
        if depth == 0:
            self._incarnation[node_id] = self.incarnation(node_id) + 1
            self.trace.log(self.now, "crash", node_id)
            actor = self.actors.get(node_id)
            if actor is not None and hasattr(actor, "on_crash"):
                actor.on_crash()
        if duration is not None:
            self.schedule(duration, self.restart, node_id)

    def restart(self, node_id: str) -> None:
        depth = self._crash_depth.get(node_id, 0)
        if depth == 0:
            return
        self._crash_depth[node_id] = depth - 1
        if depth == 1 and node_id not in self.removed:
            self.trace.log(self.now, "restart", node_id)
            actor = self.actors.get(node_id)
            if actor is not None and hasattr(actor, "on_restart"):
                actor.on_restart()

    def hang(self, node_id: str, duration: float) -> None:
        until = max(self._hung_until.get(node_id, 0.0), self.now + duration)
        self._hung_until[node_id] = until
        self.trace.log(self.now, "hang", node_id, f"{until:.3f}")

    def partition(self, a: str, b: str, duration: float | None = None) -> None:
        key = frozenset((a, b))
        self.partitions[key] = self.partitions.get(key, 0) + 1
        self.trace.log(self.now, "partition", *sorted(key))
        if duration is not None:
            self.schedule(duration, self.heal, a, b)

    def heal(self, a: str, b: str) -> None:
        key = frozenset((a, b))
        left = self.partitions.get(key, 0) - 1
        if left > 0:
            self.partitions[key] = left
        else:
            self.partitions.pop(key, None)
            self.trace.log(self.now, "heal", *sorted(key))

    def drop_messages(self, node_id: str, count: int, method: str | None = None) -> None:
        """Lose the next ``count`` messages to ``node_id`` (optionally only one RPC method)."""
        key = (node_id, method)
        self.drop_next[key] = self.drop_next.get(key, 0) + count

    def remove(self, node_id: str) -> None:
        """Decommission a node for good."""
        if node_id in self.removed:
            return
        self.removed.add(node_id)
        self._incarnation[node_id] = self.incarnation(node_id) + 1
        self.trace.log(self.now, "remove", node_id)

    def partitioned(self, a: str, b: str) -> bool:
        return bool(self.partitions) and frozenset((a, b)) in self.partitions

    # scheduling

    def schedule(self, delay: float, fn: Callable, *args, node: str | None = None, bound: bool = False) -> None:
        self._seq += 1
        inc = self.incarnation(node) if (bound and node is not None) else None
        heapq.heappush(self._heap, Event(self.now + max(delay, 0.0), self._seq, fn, args, node, inc))

    def set_timer(self, node_id: str, delay: float, fn: Callable, *args) -> None:
        self.schedule(delay, fn, *args, node=node_id, bound=True)

    def step(self) -> bool:
        if not self._heap:
            return False
        ev = heapq.heappop(self._heap)
        self.now = max(self.now, ev.time)
        node = ev.node
        if node is not None:
            if self.is_crashed(node):
                return True
            if ev.incarnation is not None and ev.incarnation != self.incarnation(node):
                return True
            until = self._hung_until.get(node, -1.0)
            if until > self.now:
                # a hung node processes nothing; the work waits for it
                self._seq += 1
                heapq.heappush(self._heap, Event(until, self._seq, ev.fn, ev.args, node, ev.incarnation))
                return True
        self.events_run += 1
        ev.fn(*ev.args)
        return True

    def run(self, until: float | None = None, max_events: int | None = None) -> None:
        n = 0
        while self._heap:
            if until is not None and self._heap[0].time > until:
                break
            if max_events is not None and n >= max_events:
                break
            self.step()
            n += 1
        if until is not None:
            self.now = max(self.now, until)

    def run_until(self, predicate: Callable[[], bool], limit: float) -> bool:
        while not predicate():
            if not self._heap or self._heap[0].time > limit:
                return predicate()
            self.step()
        return True

    @property
    def pending_events(self) -> int:
        return len(self._heap)


class Network:
    """Message passing between simulated nodes.

    ``call`` is a synchronous request with no simulated delay beyond the
    recorded round trip (used for control-plane work). ``send`` delivers
    after a jittered latency and, if ``on_reply`` is given, routes the
    handler's return value or error back to the sender.
    """

    def __init__(self, sim: Simulation, latency_ms: float = 1.0, jitter_ms: float = 0.2):
        self.sim = sim
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.link_latency: dict[frozenset, float] = {}
        self.node_latency: dict[str, float] = {}
        self.last_rtt = 0.0
        self.sent = 0
        self.dropped = 0
        self.calls = 0

    def latency(self, src: str, dst: str) -> float:
        base = self.link_latency.get(frozenset((src, dst)))
        if base is None:
            base = self.latency_ms + self.node_latency.get(dst, 0.0) + self.node_latency.get(src, 0.0)
        if self.jitter_ms:
            base += self.sim.rng.uniform(-self.jitter_ms, self.jitter_ms)
        return max(base, 0.01)

    def _blocked(self, src: str, dst: str) -> bool:
        return self.sim.is_crashed(src) or self.sim.is_crashed(dst) or self.sim.partitioned(src, dst)

    def _consume_drop(self, dst: str, method: str) -> bool:
        if not self.sim.drop_next:
            return False
        for key in ((dst, method), (dst, None)):
            left = self.sim.drop_next.get(key, 0)
            if left:
                self.sim.drop_next[key] = left - 1
                self.sim.trace.log(self.sim.now, "drop", dst, method)
                return True
        return False

    def reachable(self, src: str, dst: str) -> bool:
        return dst in self.sim.actors and not self._blocked(src, dst) and not self.sim.is_hung(dst)

    def call(self, src: str, dst: str, method: str, *args):
        self.calls += 1
        if dst not in self.sim.actors or self._blocked(src, dst):
            raise NodeUnavailable(f"{dst} unreachable from {src}")
        if self.sim.is_hung(dst) or self._consume_drop(dst, method):
            raise RpcTimeout(f"{dst} did not answer {method}")
        self.last_rtt = self.latency(src, dst) + self.latency(dst, src)
        return getattr(self.sim.actors[dst], method)(*args)

    def send(self, src: str, dst: str, method: str, *args, on_reply: Callable | None = None) -> None:
        self.sent += 1
        if dst not in self.sim.actors or self._blocked(src, dst) or self._consume_drop(dst, method):
            self.dropped += 1
            return
        sent_at = self.sim.now
        self.sim.schedule(self.latency(src, dst), self._deliver, src, dst, method, args, on_reply, sent_at, node=dst)

    def _deliver(self, src, dst, method, args, on_reply, sent_at) -> None:
        if self.sim.partitioned(src, dst):
            self.dropped += 1
            return
        try:
            result = getattr(self.sim.actors[dst], method)(*args)
        except REMOTE_ERRORS as err:
            result = err
        if on_reply is None:
            return
        if self._blocked(dst, src):
            self.dropped += 1
            return
        self.sim.schedule(self.latency(dst, src), self._reply, src, on_reply, result, sent_at, self.sim.incarnation(src), node=src)

    def _reply(self, src, on_reply, result, sent_at, incarnation) -> None:
        if incarnation != self.sim.incarnation(src):
            return
        self.last_rtt = self.sim.now - sent_at
        on_reply(result)


def new_sim(seed: int, latency_ms: float = 1.0, jitter_ms: float = 0.2, keep_trace: bool = True) -> tuple[Simulation, Network]:
    sim = Simulation(seed, keep_trace)
    return sim, Network(sim, latency_ms, jitter_ms)
