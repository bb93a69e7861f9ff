"""Scenario scripts, the synthetic front end, and the run harness.

A script is line oriented::

    # comment
    CLUSTER logstores=6 pagestores=4 slices=1 replicas=0
    CONFIG long_term_threshold_ms=2000
    AT 10 WRITE page=3 len=16
    AT 20 BEGIN_GROUP
    AT 30 CRASH node=ps2 FOR 500
    AT 40 PARTITION master ps1 FOR 200
    AT 50 READ page=3 [replica=rr1] [lsn=<n>]
    AT 60 CHECK oracle
    AT 0 EVERY 5 UNTIL 1000 VIEW replica=rr1 pages=0,16
    RUN_UNTIL 20000

Besides the basic commands the harness understands HANG, DROP, GOSSIP,
TRUNCATE, FLUSH, VIEW and GROUP_WRITE.
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import Config
from ..core import DatabaseLogBuffer, Delta, FullImage, LogRecord, PageImage, SliceId, encoded_length, page_to_slice
from ..logstore import Extent, LogStoreClient, LogStoreError, LogStoreNode, plog_path
from ..pagestore import PageStoreError, PageStoreNode
from ..replica import ReadReplica, ReplicaError, compute_recycle_lsn
from ..rpc import RPC_ERRORS
from ..sal import SAL, MetadataUnreadable, PageRouter, SalError
from ..storage import AppendOnlyFS
from .cluster import CM, ClusterManager
from .engine import new_sim

MASTER = "master"


class ScenarioParseError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    name: str
    args: dict = field(default_factory=dict)
    positional: tuple = ()

    def get(self, key: str, default=None):
        return self.args.get(key, default)

    def num(self, key: str, default: float | None = None) -> float:
        value = self.args.get(key)
        if value is None:
            if default is None:
                raise ScenarioParseError(f"{self.name} needs {key}=")
            return default
        return float(value)


@dataclass(frozen=True)
class ScheduledCommand:
    at: float
    command: Command
    every: float | None = None
    until: float | None = None
    line: int = 0


@dataclass
class Scenario:
    name: str = "scenario"
    events: list[ScheduledCommand] = field(default_factory=list)
    cluster: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    run_until: float | None = None


COMMANDS = {
    "WRITE",
    "GROUP_WRITE",
    "BEGIN_GROUP",
    "END_GROUP",
    "FLUSH",
    "CRASH",
    "HANG",
    "PARTITION",
    "DROP",
    "READ",
    "VIEW",
    "GOSSIP",
    "TRUNCATE",
    "CHECK",
}

CLUSTER_DEFAULTS = {"logstores": 6, "pagestores": 4, "slices": 1, "replicas": 0}


def _parse_command(tokens: list[str], lineno: int) -> Command:
    name = tokens[0].upper()
    if name not in COMMANDS:
        raise ScenarioParseError(f"line {lineno}: unknown command {tokens[0]!r}")
    args: dict = {}
    positional: list[str] = []
    rest = tokens[1:]
    i = 0
    while i < len(rest):
        tok = rest[i]
        if tok.upper() == "FOR":
            if i + 1 >= len(rest):
                raise ScenarioParseError(f"line {lineno}: FOR needs a duration")
            args["for"] = rest[i + 1]
            i += 2
            continue
        if "=" in tok:
            key, _, value = tok.partition("=")
            args[key] = value
        else:
            positional.append(tok)
        i += 1
    if name == "CHECK" and not positional:
        raise ScenarioParseError(f"line {lineno}: CHECK needs an invariant name")
    if name == "PARTITION" and len(positional) != 2:
        raise ScenarioParseError(f"line {lineno}: PARTITION needs two node ids")
    if name in ("CRASH", "HANG") and "node" not in args:
        raise ScenarioParseError(f"line {lineno}: {name} needs node=")
    return Command(name, args, tuple(positional))


def _number(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioParseError(f"line {lineno}: expected a number, got {text!r}") from None


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    scenario = Scenario(name)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = shlex.split(line)
        head = tokens[0].upper()
        if head in ("CLUSTER", "CONFIG"):
            target = scenario.cluster if head == "CLUSTER" else scenario.config
            for tok in tokens[1:]:
                if "=" not in tok:
                    raise ScenarioParseError(f"line {lineno}: expected key=value, got {tok!r}")
                key, _, value = tok.partition("=")
                target[key] = value
            continue
        if head == "RUN_UNTIL":
            if len(tokens) != 2:
                raise ScenarioParseError(f"line {lineno}: RUN_UNTIL needs one time")
            scenario.run_until = _number(tokens[1], lineno)
            continue
        if head != "AT" or len(tokens) < 3:
            raise ScenarioParseError(f"line {lineno}: expected 'AT <ms> <command>'")
        at = _number(tokens[1], lineno)
        rest = tokens[2:]
        every = until = None
        if rest[0].upper() == "EVERY":
            if len(rest) < 5 or rest[2].upper() != "UNTIL":
                raise ScenarioParseError(f"line {lineno}: expected 'EVERY <ms> UNTIL <ms> <command>'")
            every = _number(rest[1], lineno)
            until = _number(rest[3], lineno)
            if every <= 0:
                raise ScenarioParseError(f"line {lineno}: EVERY needs a positive period")
            rest = rest[4:]
        if at < 0:
            raise ScenarioParseError(f"line {lineno}: negative time")
        scenario.events.append(ScheduledCommand(at, _parse_command(rest, lineno), every, until, lineno))
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.stem)


def bundled_scenarios() -> dict[str, Path]:
    root = Path(__file__).resolve().parent.parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.txt"))}


# oracle and auditor


class ReplayOracle:
    """Byte-array replay of acknowledged records; independent of page code."""

    def __init__(self, page_size: int):
        self.page_size = page_size
        self.by_page: dict[int, list[LogRecord]] = {}
        self.by_slice_max: dict[SliceId, int] = {}
        self.mid_group: set[int] = set()  # LSNs after which a group is still open
        self.acked = 0

    def ack(self, records) -> None:
        for r in records:
            self.by_page.setdefault(r.page, []).append(r)
            self.by_slice_max[r.slice] = max(self.by_slice_max.get(r.slice, 0), r.lsn)
            if not r.group_end:
                self.mid_group.add(r.lsn)
            self.acked += 1

    def max_lsn(self, slice_id: SliceId) -> int:
        return self.by_slice_max.get(slice_id, 0)

    def image(self, page: int, lsn: int) -> tuple[int, bytes]:
        buf = bytearray(self.page_size)
        version = 0
        for r in self.by_page.get(page, ()):
            if r.lsn > lsn:
                break
            if isinstance(r.op, FullImage):
                buf[:] = r.op.data
            else:
                buf[r.op.offset : r.op.offset + len(r.op.data)] = r.op.data
            version = r.lsn
        return version, bytes(buf)

    def matches(self, image: PageImage, lsn: int) -> bool:
        return (image.version, image.data) == self.image(image.page, lsn)


class DurabilityAuditor:
    """Counts, for each acknowledged record, the distinct nodes that hold it.

    Log Store copies are replica files (of live PLogs on nodes whose data has
    not been re-created elsewhere) that extend past the record's end offset.
    Page Store copies are hosting nodes whose coverage includes the LSN.
    """

    def __init__(self, cluster: "SimCluster"):
        self.cluster = cluster
        self.violations: list[str] = []
        self.audits = 0
        self._lsn: list[int] = []
        self._end: list[int] = []
        self._by_plog: dict[str, list[int]] = {}
        self._by_slice: dict[SliceId, list[int]] = {}
        self._cache: tuple[int, dict] | None = None

    def on_ack(self, extent: Extent, records) -> None:
        pos = extent.offset
        in_plog = self._by_plog.setdefault(extent.plog_id, [])
        for r in records:
            pos += encoded_length(r)
            i = len(self._lsn)
            self._lsn.append(r.lsn)
            self._end.append(pos)
            in_plog.append(i)
            self._by_slice.setdefault(r.slice, []).append(i)

    def __len__(self) -> int:
        return len(self._lsn)

    def lsns(self) -> list[int]:
        return list(self._lsn)

    def _arrays(self) -> dict:
        n = len(self._lsn)
        if self._cache is None or self._cache[0] != n:
            as_array = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
            self._cache = (
                n,
                {
                    "lsn": as_array(self._lsn),
                    "end": as_array(self._end),
                    "plog": {k: as_array(v) for k, v in self._by_plog.items()},
                    "slice": {k: as_array(v) for k, v in self._by_slice.items()},
                },
            )
        return self._cache[1]

    def copies(self) -> dict[int, int]:
        c = self.cluster
        retired = c.cm.retired
        arrays = self._arrays()
        lsn, end = arrays["lsn"], arrays["end"]
        count = np.zeros(len(lsn), dtype=np.int64)
        for plog_id, idx in arrays["plog"].items():
            plog = c.cm.ls.plogs.get(plog_id)
            if plog is None:
                continue
            for node in plog.replicas:
                path = plog_path(node, plog_id)
                if node not in retired and c.fs.exists(path):
                    count[idx] += end[idx] <= c.fs.size(path)
        for slice_id, idx in arrays["slice"].items():
            for node_id, ps in c.page_stores.items():
                rep = ps.slices.get(slice_id)
                if node_id in retired or rep is None:
                    continue
                lo_list, hi_list = rep.coverage.bounds()
                los = np.asarray(lo_list, dtype=np.int64)
                his = np.asarray(hi_list, dtype=np.int64)
                if not len(los):
                    continue
                want = lsn[idx]
                pos = np.searchsorted(his, want, side="left")
                ok = pos < len(los)
                ok[ok] &= los[pos[ok]] < want[ok]
                count[idx] += ok
        return dict(zip(lsn.tolist(), count.tolist()))

    def audit(self, label: str = "") -> int:
        self.audits += 1
        bad = 0
        for lsn, n in self.copies().items():
            if n < 3:
                bad += 1
                if len(self.violations) < 50:
                    self.violations.append(f"t={self.cluster.sim.now:.1f} {label} lsn {lsn} on {n} nodes")
        return bad


# master front end


class MasterNode:
    """The database front end: workload driver plus its SAL library."""

    def __init__(self, cluster: "SimCluster"):
        self.cluster = cluster
        self.config = cluster.config
        self.rng = random.Random(f"workload-{cluster.seed}")
        self.sal: SAL | None = None
        self.publisher = None
        self.next_lsn = 1
        self.open_group: list[LogRecord] | None = None
        self.ready: list[LogRecord] = []
        self._flush_armed = False
        self.recoveries: list[dict] = []
        self.write_retries = 0

    @property
    def env(self):
        return self.cluster.sim

    def boot(self) -> None:
        from ..replica import MasterPublisher

        c = self.cluster
        self.sal = self._new_sal()
        self.publisher = MasterPublisher(self.sal, c.net, sorted(c.replicas))
        self.sal.publisher = self.publisher
        self.sal.start()
        self.env.set_timer(MASTER, self.config.recycle_interval_ms, self._recycle_tick)

    def _new_sal(self) -> SAL:
        c = self.cluster
        client = LogStoreClient(c.cm.ls, MASTER, c.net)
        return SAL(MASTER, self.config, c.sim, c.net, client, c.cm.placement, random.Random(f"sal-{c.seed}-{len(self.recoveries)}"))

    # crash and recovery

    def on_crash(self) -> None:
        self.sal = None
        self.open_group = None
        self.ready = []
        self._flush_armed = False

    def on_restart(self) -> None:
        self._recover()

    def _recover(self) -> None:
        sal = self._new_sal()
        try:
            resent = sal.recover()
        except (MetadataUnreadable, LogStoreError, *RPC_ERRORS):
            self.env.set_timer(MASTER, self.config.write_retry_ms, self._recover)
            return
        c = self.cluster
        checkpoint = sal.recovered_from or 0
        after = sum(1 for lsn in c.auditor.lsns() if lsn > checkpoint)
        self.recoveries.append(
            {"time": self.env.now, "resent": resent, "after_checkpoint": after, "checkpoint": checkpoint, "durable": sal.durable_lsn}
        )
        c.sim.trace.log(self.env.now, "recovered_master", checkpoint, sal.durable_lsn, resent, after)
        self.sal = sal
        self.publisher.sal = sal
        sal.publisher = self.publisher
        self.next_lsn = sal.durable_lsn + 1
        sal.start()
        self.env.set_timer(MASTER, self.config.recycle_interval_ms, self._recycle_tick)

    def replica_snapshot(self) -> bytes:
        if self.sal is None:
            raise SalError("master is recovering")
        return self.publisher.snapshot()

    # workload

    def begin_group(self) -> None:
        if self.sal is not None and self.open_group is None:
            self.open_group = []

    def end_group(self) -> None:
        if self.open_group is None:
            return
        group = self.open_group
        self.open_group = None
        if group:
            group[-1] = LogRecord(group[-1].slice, group[-1].page, group[-1].lsn, group[-1].op, True)
            self._queue(group)

    def write(self, page: int, length: int, offset: int | None = None, data: bytes | None = None) -> None:
        if self.sal is None:
            return
        size = self.config.page_size
        length = max(1, min(length, size))
        if data is None:
            data = self.rng.randbytes(length)
        if offset is None:
            offset = self.rng.randrange(0, size - len(data) + 1)
        slice_id = page_to_slice(page, self.config.pages_per_slice, self.config.database)
        op = FullImage(data) if len(data) == size else Delta(offset, data)
        rec = LogRecord(slice_id, page, self.next_lsn, op, self.open_group is None)
        self.next_lsn += 1
        if self.open_group is not None:
            self.open_group.append(rec)
        else:
            self._queue([rec])

    def group_write(self, pages: list[int], data: bytes) -> None:
        self.begin_group()
        for page in pages:
            self.write(page, len(data), 0, data)
        self.end_group()

    def _queue(self, records: list[LogRecord]) -> None:
        self.ready.extend(records)
        if len(self.ready) >= self.config.db_buffer_max_records:
            self.flush()
        elif not self._flush_armed:
            self._flush_armed = True
            self.env.set_timer(MASTER, self.config.db_buffer_flush_ms, self._flush_timer)

    def _flush_timer(self) -> None:
        self._flush_armed = False
        self.flush()

    def flush(self) -> bool:
        sal = self.sal
        if sal is None or not self.ready:
            return False
        if sal.throttled:
            self._retry(self.config.throttle_backoff_ms)
            return False
        buffer = DatabaseLogBuffer(tuple(self.ready))
        try:
            extent = sal.write_log_buffer(buffer)
        except LogStoreError:
            self.write_retries += 1
            self._retry(self.config.write_retry_ms)
            return False
        self.ready = []
        self.cluster.on_ack(extent, buffer.records)
        return True

    def _retry(self, delay: float) -> None:
        if not self._flush_armed:
            self._flush_armed = True
            self.env.set_timer(MASTER, delay, self._flush_timer)

    # recycle LSN

    def _recycle_tick(self) -> None:
        sal = self.sal
        if sal is None:
            return
        c = self.cluster
        minima = []
        for rr in sorted(c.replicas):
            try:
                c.last_min_tv[rr] = c.net.call(MASTER, rr, "report_min_tv")
            except RPC_ERRORS:
                pass
            minima.append(c.last_min_tv.get(rr, 0))
        # never collect below a replica's covered prefix: gossip must still be able to fill its holes
        lowest = min((sl.persistent for st in sal.slices.values() for sl in st.slots), default=0)
        floor = max(0, min(sal.cv_lsn - self.config.recycle_lag_lsns, lowest))
        sal.issue_recycle(compute_recycle_lsn(sal.recycle_lsn, floor, minima))
        if self.config.truncate_with_recycle:
            try:
                if sal.truncate():
                    c.auditor.audit("truncate")
            except LogStoreError:
                pass
        self.env.set_timer(MASTER, self.config.recycle_interval_ms, self._recycle_tick)


# cluster assembly


class SimCluster:
    def __init__(
        self,
        config: Config,
        seed: int,
        logstores: int = 6,
        pagestores: int = 4,
        slices: int = 1,
        replicas: int = 0,
        keep_trace: bool = True,
    ):
        self.config = config
        self.seed = seed
        self.sim, self.net = new_sim(seed, config.latency_ms, config.jitter_ms, keep_trace)
        self.fs = AppendOnlyFS()
        self.log_stores = {f"ls{i}": LogStoreNode(f"ls{i}", self.fs, config.fifo_cache_bytes) for i in range(1, logstores + 1)}
        self.page_stores: dict[str, PageStoreNode] = {}
        self.cm = ClusterManager(self.sim, self.net, config, self.log_stores, self.page_stores, random.Random(f"cm-{seed}"))
        for i in range(1, pagestores + 1):
            self.cm.add_pagestore(PageStoreNode(f"ps{i}", config, self.fs, self.net, self.sim, self.cm.peers_of))
        for node_id, node in sorted({**self.log_stores, **self.page_stores}.items()):
            self.sim.add_actor(node_id, node)
        self.slice_ids = [SliceId(config.database, i) for i in range(slices)]
        self.cm.assign_slices(self.slice_ids)
        self.sim.add_actor(CM, self.cm)
        self.oracle = ReplayOracle(config.page_size)
        self.auditor = DurabilityAuditor(self)
        self.cm.on_retired = lambda node: self.auditor.audit(f"retired {node}")
        self.master = MasterNode(self)
        self.sim.add_actor(MASTER, self.master)
        self.replicas: dict[str, ReadReplica] = {}
        self.last_min_tv: dict[str, int] = {}
        for i in range(1, replicas + 1):
            node_id = f"rr{i}"
            client = LogStoreClient(self.cm.ls, node_id, self.net)
            router = PageRouter(self.net, node_id, self.cm.placement, random.Random(f"router-{seed}-{i}"))
            self.replicas[node_id] = ReadReplica(node_id, config, self.sim, self.net, client, router, MASTER)
            self.sim.add_actor(node_id, self.replicas[node_id])

    def start(self) -> None:
        self.cm.start()
        for node in self.page_stores.values():
            node.start()
        self.master.boot()
        for rr in self.replicas.values():
            rr.start()

    def on_ack(self, extent: Extent, records) -> None:
        self.sim.trace.log(self.sim.now, "ack", extent.plog_id, extent.offset, extent.min_lsn, extent.max_lsn)
        self.oracle.ack(records)
        self.auditor.on_ack(extent, records)

    def slice_of(self, page: int) -> SliceId:
        return page_to_slice(page, self.config.pages_per_slice, self.config.database)

    def metric_totals(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        for node in self.page_stores.values():
            for key, value in node.metrics.items():
                totals[key] = totals.get(key, 0) + value
        return totals


# run harness


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    time: float = 0.0


@dataclass
class RunResult:
    scenario: str
    seed: int
    trace_hash: str
    trace: list[str]
    checks: list[CheckResult]
    audit_violations: list[str]
    reads_ok: int
    reads_mismatched: list[str]
    reads_unavailable: int
    metrics: list[tuple[float, str, str, float]]
    cluster: SimCluster

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks) and not self.audit_violations and not self.reads_mismatched

    def first_failure(self) -> str | None:
        for c in self.checks:
            if not c.ok:
                return f"CHECK {c.name} failed: {c.detail}"
        if self.audit_violations:
            return f"durability audit: {self.audit_violations[0]}"
        if self.reads_mismatched:
            return f"oracle mismatch: {self.reads_mismatched[0]}"
        return None


def _cluster_params(scenario: Scenario) -> dict:
    params = dict(CLUSTER_DEFAULTS)
    for key, value in scenario.cluster.items():
        if key not in CLUSTER_DEFAULTS:
            raise ScenarioParseError(f"unknown CLUSTER key {key!r}")
        params[key] = int(value)
    return params


class Runner:
    def __init__(
        self,
        scenario: Scenario,
        seed: int,
        config: Config | None = None,
        keep_trace: bool = True,
        audit_interval_ms: float = 1000.0,
        settle_ms: float = 8000.0,
        force: dict | None = None,
    ):
        base = config or Config()
        self.config = base.with_overrides(**scenario.config) if scenario.config else base
        if force:
            # caller-side overrides beat the script's CONFIG lines
            self.config = self.config.with_overrides(**force)
        self.scenario = scenario
        self.seed = seed
        self.settle_ms = settle_ms
        self.audit_interval_ms = audit_interval_ms
        self.cluster = SimCluster(self.config, seed, keep_trace=keep_trace, **_cluster_params(scenario))
        self.checks: list[CheckResult] = []
        self.reads_ok = 0
        self.reads_unavailable = 0
        self.mismatches: list[str] = []
        self.views = 0
        self.samples: list[tuple[float, str, str, float]] = []
        self.rng = random.Random(f"runner-{seed}")

    @property
    def sim(self):
        return self.cluster.sim

    def _log(self, kind: str, *fields) -> None:
        self.sim.trace.log(self.sim.now, kind, *fields)

    def run(self) -> RunResult:
        c = self.cluster
        c.start()
        last = 0.0
        for ev in self.scenario.events:
            self._schedule(ev)
            last = max(last, ev.until if ev.every else ev.at)
        end = self.scenario.run_until if self.scenario.run_until is not None else last + self.settle_ms
        self.sim.set_timer("harness", self.audit_interval_ms, self._periodic)
        self.sim.run(until=end)
        c.auditor.audit("end")
        self._sample()
        return RunResult(
            self.scenario.name,
            self.seed,
            self.sim.trace.digest(),
            self.sim.trace.lines,
            self.checks,
            c.auditor.violations,
            self.reads_ok,
            self.mismatches,
            self.reads_unavailable,
            self.samples,
            c,
        )

    def _periodic(self) -> None:
        self.cluster.auditor.audit("periodic")
        self._sample()
        self.sim.set_timer("harness", self.audit_interval_ms, self._periodic)

    def _sample(self) -> None:
        t = self.sim.now
        sal = self.cluster.master.sal
        if sal is not None:
            self.samples.append((t, "cvLsn", MASTER, sal.cv_lsn))
            self.samples.append((t, "dbPersistentLsn", MASTER, sal.db_persistent_lsn))
            self.samples.append((t, "resentRecords", MASTER, sal.metrics["resentRecords"]))
            self.samples.append((t, "truncatedPLogs", MASTER, sal.metrics["truncatedPLogs"]))
        for node_id, node in sorted(self.cluster.page_stores.items()):
            for key in ("diskRecordReads", "gossipRecordsExchanged"):
                self.samples.append((t, key, node_id, node.metrics[key]))
            self.samples.append((t, "bufferPoolHits", node_id, node.bufferPoolHits))
            self.samples.append((t, "bufferPoolMisses", node_id, node.bufferPoolMisses))
            self.samples.append((t, "logCacheSpills", node_id, node.logCacheSpills))
        for node_id, rr in sorted(self.cluster.replicas.items()):
            self.samples.append((t, "replicaLag", node_id, rr.metrics["replicaLagMs"]))

    def _schedule(self, ev: ScheduledCommand) -> None:
        cmd = ev.command
        target = MASTER if cmd.name in ("WRITE", "GROUP_WRITE", "BEGIN_GROUP", "END_GROUP", "FLUSH", "READ", "TRUNCATE") else None
        if cmd.name == "READ" and cmd.get("replica") is not None:
            target = None
        if ev.every is None:
            self._at(ev.at, target, cmd)
            return
        t = ev.at
        while t <= ev.until:
            self._at(t, target, cmd)
            t += ev.every

    def _at(self, at: float, target: str | None, cmd: Command) -> None:
        delay = at - self.sim.now
        if target is None:
            self.sim.schedule(delay, self.execute, cmd)
        else:
            # front-end work is lost while the master is down
            self.sim.schedule(delay, self.execute, cmd, node=target)

    # command execution

    def execute(self, cmd: Command) -> None:
        getattr(self, f"_cmd_{cmd.name.lower()}")(cmd)

    def _cmd_write(self, cmd: Command) -> None:
        page = int(cmd.num("page"))
        length = int(cmd.num("len", 16))
        offset = cmd.get("offset")
        self.cluster.master.write(page, length, int(offset) if offset is not None else None)

    def _cmd_group_write(self, cmd: Command) -> None:
        pages = [int(p) for p in cmd.get("pages", "").split(",") if p]
        m = self.cluster.master
        marker = m.next_lsn.to_bytes(8, "little")
        m.group_write(pages, marker)

    def _cmd_begin_group(self, cmd: Command) -> None:
        self.cluster.master.begin_group()

    def _cmd_end_group(self, cmd: Command) -> None:
        self.cluster.master.end_group()

    def _cmd_flush(self, cmd: Command) -> None:
        self.cluster.master.flush()

    def _cmd_crash(self, cmd: Command) -> None:
        node = cmd.get("node")
        self.sim.crash(node, cmd.num("for", 0) or None)

    def _cmd_hang(self, cmd: Command) -> None:
        self.sim.hang(cmd.get("node"), cmd.num("for"))

    def _cmd_partition(self, cmd: Command) -> None:
        a, b = cmd.positional
        self.sim.partition(a, b, cmd.num("for", 0) or None)

    def _cmd_drop(self, cmd: Command) -> None:
        self.sim.drop_messages(cmd.get("node"), int(cmd.num("n", 1)), cmd.get("method"))

    def _cmd_truncate(self, cmd: Command) -> None:
        sal = self.cluster.master.sal
        if sal is None:
            return
        deleted = sal.truncate()
        self._log("truncate", deleted, sal.db_persistent_lsn)
        self.cluster.auditor.audit("truncate")

    def _cmd_gossip(self, cmd: Command) -> None:
        node = self.cluster.page_stores[cmd.get("node")]
        slice_id = SliceId(self.config.database, int(cmd.num("slice", 0)))
        peer = cmd.get("peer")
        if not self.sim.is_up(node.node_id):
            return
        try:
            moved = node.gossip_round(slice_id, peer) if peer else node.gossip_now(slice_id)
        except PageStoreError:
            moved = -1
        self._log("gossip", node.node_id, slice_id, peer or "*", moved)

    def _read_lsn(self, cmd: Command, slice_id: SliceId) -> int:
        sal = self.cluster.master.sal
        lsn = cmd.get("lsn")
        flush = sal.flush_lsn(slice_id)
        if lsn == "random":
            return self.rng.randint(min(sal.recycle_lsn, flush), flush)
        if lsn is not None:
            return int(lsn)
        return flush

    def _cmd_read(self, cmd: Command) -> None:
        page = int(cmd.num("page"))
        replica = cmd.get("replica")
        c = self.cluster
        if replica is not None and replica in c.replicas:
            self._replica_read(replica, [page])
            return
        sal = c.master.sal
        if replica is None and (sal is None or not self.sim.is_up(MASTER)):
            return
        slice_id = c.slice_of(page)
        if replica is not None:
            if sal is None:
                return
            lsn = sal.flush_lsn(slice_id)
            try:
                image = c.net.call(MASTER, replica, "read_page", slice_id, page, lsn)
            except (*RPC_ERRORS, PageStoreError):
                self.reads_unavailable += 1
                return
        else:
            lsn = self._read_lsn(cmd, slice_id)
            try:
                image = sal.read_page_routed(page, lsn)
            except (SalError, PageStoreError, LogStoreError, *RPC_ERRORS):
                self.reads_unavailable += 1
                self._log("read_unavailable", page, lsn)
                return
        self._compare(image, lsn, replica or "sal")

    def _compare(self, image: PageImage, lsn: int, via: str) -> bool:
        ok = self.cluster.oracle.matches(image, lsn)
        self._log("read", via, image.page, lsn, image.version, "ok" if ok else "MISMATCH")
        if ok:
            self.reads_ok += 1
        else:
            self.mismatches.append(f"t={self.sim.now:.1f} page {image.page} at {lsn} via {via}: got v{image.version}")
        return ok

    def _replica_read(self, replica: str, pages: list[int], counters: bool = False) -> None:
        rr = self.cluster.replicas[replica]
        if not self.sim.is_up(replica) or not rr.registered:
            return
        tv = rr.open_read_view()
        images = []
        try:
            for page in pages:
                try:
                    images.append(rr.replica_read_page(page, tv))
                except (SalError, PageStoreError, ReplicaError, *RPC_ERRORS):
                    self.reads_unavailable += 1
                    return
        finally:
            rr.release_read_view(tv)
        self.views += 1
        if tv in self.cluster.oracle.mid_group:
            self.mismatches.append(f"t={self.sim.now:.1f} view at {tv} splits a group")
        for image in images:
            self._compare(image, tv, replica)
        if counters and len(images) > 1:
            heads = {img.data[:8] for img in images}
            if len(heads) != 1:
                self.mismatches.append(f"t={self.sim.now:.1f} view at {tv} saw a half-applied group")

    def _cmd_view(self, cmd: Command) -> None:
        pages = [int(p) for p in cmd.get("pages", "").split(",") if p]
        self._replica_read(cmd.get("replica", "rr1"), pages, cmd.get("counters", "0") == "1")

    def _cmd_check(self, cmd: Command) -> None:
        name = cmd.positional[0]
        fn = CHECKS.get(name)
        if fn is None:
            result = CheckResult(name, False, "unknown invariant")
        else:
            ok, detail = fn(self, cmd)
            result = CheckResult(name, ok, detail)
        result.time = self.sim.now
        self.checks.append(result)
        self._log("check", name, "pass" if result.ok else "FAIL", detail_token(result.detail))


def detail_token(text: str) -> str:
    return text.replace(" ", "_")[:80] if text else "-"


# invariants usable from CHECK lines


def check_oracle(runner: Runner, cmd: Command) -> tuple[bool, str]:
    c = runner.cluster
    sal = c.master.sal
    if sal is None:
        return False, "master down"
    bad = []
    for page in sorted(c.oracle.by_page):
        lsn = sal.flush_lsn(c.slice_of(page))
        try:
            image = sal.read_page_routed(page, lsn)
        except (SalError, PageStoreError, LogStoreError, *RPC_ERRORS) as err:
            bad.append(f"page {page}: {type(err).__name__}")
            continue
        if not runner._compare(image, lsn, "check"):
            bad.append(f"page {page} differs at {lsn}")
    return not bad, "; ".join(bad[:3]) or f"{len(c.oracle.by_page)} pages"


def check_durability(runner: Runner, cmd: Command) -> tuple[bool, str]:
    bad = runner.cluster.auditor.audit("check")
    return bad == 0, f"{bad} under-replicated records"


def _slice_status(runner: Runner, slice_id: SliceId):
    out = {}
    for node in runner.cluster.cm.placement[slice_id]:
        ps = runner.cluster.page_stores[node]
        out[node] = ps.status(slice_id)
    return out


def check_record_everywhere(runner: Runner, cmd: Command) -> tuple[bool, str]:
    lsn = int(cmd.num("lsn"))
    c = runner.cluster
    slice_id = SliceId(c.config.database, int(cmd.num("slice", 0)))
    missing = [n for n in c.cm.placement[slice_id] if not c.page_stores[n].slices[slice_id].coverage.contains(lsn)]
    return not missing, f"lsn {lsn} missing on {','.join(missing)}" if missing else f"lsn {lsn} on all replicas"


def check_record_missing(runner: Runner, cmd: Command) -> tuple[bool, str]:
    """Scenario precondition: ``node`` lacks ``lsn`` right now."""
    lsn = int(cmd.num("lsn"))
    c = runner.cluster
    node = cmd.get("node")
    slice_id = SliceId(c.config.database, int(cmd.num("slice", 0)))
    rep = c.page_stores[node].slices.get(slice_id)
    absent = rep is None or not rep.coverage.contains(lsn)
    return absent, f"lsn {lsn} {'absent from' if absent else 'present on'} {node}"


def check_identical(runner: Runner, cmd: Command) -> tuple[bool, str]:
    """All replicas of each slice: equal persistent LSN, no gaps, same pages."""
    c = runner.cluster
    for slice_id in c.slice_ids:
        ok, detail = replicas_converged(c, slice_id)
        if not ok:
            return False, f"{slice_id}: {detail}"
    return True, "replicas identical"


def check_no_disk_reads(runner: Runner, cmd: Command) -> tuple[bool, str]:
    n = runner.cluster.metric_totals().get("diskRecordReads", 0)
    return n == 0, f"diskRecordReads={n}"


def check_disk_reads(runner: Runner, cmd: Command) -> tuple[bool, str]:
    n = runner.cluster.metric_totals().get("diskRecordReads", 0)
    return n > 0, f"diskRecordReads={n}"


def check_replica_consistency(runner: Runner, cmd: Command) -> tuple[bool, str]:
    for node_id, rr in sorted(runner.cluster.replicas.items()):
        try:
            rr.check_invariants()
        except AssertionError as err:
            return False, f"{node_id}: {err}"
    return True, f"{runner.views} views"


def check_views(runner: Runner, cmd: Command) -> tuple[bool, str]:
    need = int(cmd.num("min", 1))
    return runner.views >= need, f"{runner.views} read views sampled"


def check_resent(runner: Runner, cmd: Command) -> tuple[bool, str]:
    sal = runner.cluster.master.sal
    if sal is None:
        return False, "master down"
    n = sal.metrics["resentRecords"]
    return n > 0, f"resentRecords={n}"


def check_truncated(runner: Runner, cmd: Command) -> tuple[bool, str]:
    sal = runner.cluster.master.sal
    if sal is None:
        return False, "master down"
    n = sal.metrics["truncatedPLogs"]
    return n > 0, f"truncatedPLogs={n} log_floor={sal.log_floor}"


def check_recovery_bound(runner: Runner, cmd: Command) -> tuple[bool, str]:
    recs = runner.cluster.master.recoveries
    if not recs:
        return False, "no master recovery happened"
    worst = [r for r in recs if r["resent"] > r["after_checkpoint"]]
    last = recs[-1]
    return not worst, f"resent {last['resent']} of {last['after_checkpoint']} after checkpoint"


CHECKS: dict[str, Callable[[Runner, Command], tuple[bool, str]]] = {
    "oracle": check_oracle,
    "durability": check_durability,
    "replicas_identical": check_identical,
    "record_everywhere": check_record_everywhere,
    "record_missing": check_record_missing,
    "no_disk_reads": check_no_disk_reads,
    "disk_reads": check_disk_reads,
    "replica_consistency": check_replica_consistency,
    "views": check_views,
    "resent": check_resent,
    "recovery_bound": check_recovery_bound,
    "truncated": check_truncated,
}


def replicas_converged(cluster: SimCluster, slice_id: SliceId) -> tuple[bool, str]:
    nodes = cluster.cm.placement[slice_id]
    statuses = [cluster.page_stores[n].status(slice_id) for n in nodes]
    persist = {s.persistent_lsn for s in statuses}
    if len(persist) != 1:
        return False, f"persistent LSNs differ {[s.persistent_lsn for s in statuses]}"
    if any(s.gaps for s in statuses):
        return False, "gap lists not empty"
    if any(s.max_covered != s.persistent_lsn for s in statuses):
        return False, "coverage beyond a hole"
    lsn = persist.pop()
    acked = cluster.oracle.max_lsn(slice_id)
    if lsn < acked:
        return False, f"persistent LSN {lsn} below acknowledged {acked}"
    for page in sorted(cluster.oracle.by_page):
        if cluster.slice_of(page) != slice_id:
            continue
        images = set()
        for n in nodes:
            try:
                img = cluster.page_stores[n].read_page(slice_id, page, lsn)
            except PageStoreError as err:
                return False, f"{n} cannot serve page {page}: {type(err).__name__}"
            images.add((img.version, img.data))
        if len(images) != 1:
            return False, f"page {page} differs across replicas"
        if images.pop() != cluster.oracle.image(page, lsn):
            return False, f"page {page} differs from the oracle"
    return True, "converged"


def converge_by_gossip(cluster: SimCluster, slice_id: SliceId, max_rounds: int = 3) -> int | None:
    """Run ring gossip rounds until replicas agree; return rounds used or None."""
    nodes = cluster.cm.placement[slice_id]
    for used in range(max_rounds + 1):
        if replicas_converged(cluster, slice_id)[0]:
            return used
        if used == max_rounds:
            break
        for i, node in enumerate(nodes):
            peer = nodes[(i + 1) % len(nodes)]
            cluster.page_stores[node].gossip_round(slice_id, peer)
    return None


def run_scenario(
    scenario: Scenario,
    seed: int,
    config: Config | None = None,
    keep_trace: bool = True,
    settle_ms: float = 8000.0,
    audit_interval_ms: float = 1000.0,
    force: dict | None = None,
) -> RunResult:
    return Runner(scenario, seed, config, keep_trace, audit_interval_ms, settle_ms, force).run()


# randomized workloads


@dataclass
class GeneratorParams:
    pages: int = 64
    slices: int = 4
    writes: int = 10_000
    duration_ms: float = 60_000.0
    fault_rate: float = 0.1  # faults per simulated second
    reads: int = 1000
    logstores: int = 6
    pagestores: int = 5
    long_term_fraction: float = 0.25
    max_concurrent_faults: int = 2
    group_fraction: float = 0.1
    settle_ms: float = 10_000.0
    replicas: int = 0
    views: int = 200  # only used when replicas > 0


def generate_workload(seed: int, params: GeneratorParams | None = None, config: Config | None = None) -> Scenario:
    """Seeded random writes, reads and faults as a scenario."""
    p = params or GeneratorParams()
    cfg = config or Config()
    rng = random.Random(f"gen-{seed}")
    pages_per_slice = max(1, p.pages // p.slices)
    sc = Scenario(
        f"gen-{seed}",
        cluster={"logstores": p.logstores, "pagestores": p.pagestores, "slices": p.slices, "replicas": p.replicas},
        config={"pages_per_slice": pages_per_slice},
    )
    add = sc.events.append
    for t in sorted(rng.uniform(0, p.duration_ms) for _ in range(p.writes)):
        page = rng.randrange(p.pages)
        if rng.random() < p.group_fraction:
            other = rng.randrange(p.pages)
            add(ScheduledCommand(round(t, 3), Command("GROUP_WRITE", {"pages": f"{page},{other}"})))
        else:
            add(ScheduledCommand(round(t, 3), Command("WRITE", {"page": str(page), "len": str(rng.randint(1, 64))})))
    for t in sorted(rng.uniform(0, p.duration_ms) for _ in range(p.reads)):
        add(ScheduledCommand(round(t, 3), Command("READ", {"page": str(rng.randrange(p.pages)), "lsn": "random"})))

    ls = [f"ls{i}" for i in range(1, p.logstores + 1)]
    ps = [f"ps{i}" for i in range(1, p.pagestores + 1)]
    long_budget = {"ls": max(0, p.logstores - 4), "ps": max(0, min(1, p.pagestores - 4))}
    busy: list[tuple[float, float, str]] = []  # (start, end, node)
    dead: set[str] = set()
    long_window = cfg.long_term_threshold_ms + 3 * cfg.heartbeat_ms + 2000.0
    t = 0.0
    while p.fault_rate > 0:
        t += rng.expovariate(p.fault_rate / 1000.0)
        if t >= p.duration_ms:
            break
        active = [b for b in busy if b[0] <= t < b[1]]
        if len(active) >= p.max_concurrent_faults:
            continue
        taken = {b[2] for b in active} | dead
        kind = rng.choices(["crash", "partition", "hang"], [0.5, 0.3, 0.2])[0]
        if kind == "crash":
            node = rng.choice(ls + ps + [MASTER] * 2)
            if node in taken:
                continue
            group = node[:2]
            if node != MASTER and long_budget.get(group, 0) > 0 and rng.random() < p.long_term_fraction:
                long_budget[group] -= 1
                dead.add(node)
                busy.append((t, t + long_window, node))
                add(ScheduledCommand(round(t, 3), Command("CRASH", {"node": node, "for": str(10 * p.duration_ms + 1e6)})))
                continue
            dur = round(rng.uniform(200, 3000), 3)
            busy.append((t, t + dur, node))
            add(ScheduledCommand(round(t, 3), Command("CRASH", {"node": node, "for": str(dur)})))
        elif kind == "partition":
            a = rng.choice([MASTER] + ps)
            b = rng.choice([n for n in ls + ps if n != a])
            if a in taken or b in taken:
                continue
            dur = round(rng.uniform(100, 1500), 3)
            busy.append((t, t + dur, a))
            busy.append((t, t + dur, b))
            add(ScheduledCommand(round(t, 3), Command("PARTITION", {"for": str(dur)}, (a, b))))
        else:
            node = rng.choice(ls + ps)
            if node in taken:
                continue
            dur = round(rng.uniform(50, 800), 3)
            busy.append((t, t + dur, node))
            add(ScheduledCommand(round(t, 3), Command("HANG", {"node": node, "for": str(dur)})))
    for _ in range(p.views if p.replicas > 0 else 0):
        at = round(rng.uniform(0, p.duration_ms), 3)
        pages = ",".join(str(rng.randrange(p.pages)) for _ in range(2))
        replica = f"rr{rng.randint(1, p.replicas)}"
        add(ScheduledCommand(at, Command("VIEW", {"replica": replica, "pages": pages})))
    sc.events.sort(key=lambda e: e.at)
    end = p.duration_ms + p.settle_ms
    if p.replicas > 0:
        sc.events.append(ScheduledCommand(end - 1.0, Command("CHECK", {}, ("replica_consistency",))))
    sc.events.append(ScheduledCommand(end - 1.0, Command("CHECK", {}, ("oracle",))))
    sc.events.append(ScheduledCommand(end - 1.0, Command("CHECK", {}, ("durability",))))
    sc.run_until = end
    return sc
