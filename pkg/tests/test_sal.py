import random

import pytest

from taurus_mini.config import Config
from taurus_mini.core import SliceId
from taurus_mini.rpc import NodeUnavailable
from taurus_mini.sal import PageRouter, SliceUnrecoverable
from taurus_mini.simnet.engine import new_sim
from taurus_mini.simnet.scenario import MASTER, SimCluster


def cluster(slices=2, seed=0, **cfg):
    c = SimCluster(Config(**cfg), seed=seed, logstores=6, pagestores=4, slices=slices)
    c.start()
    return c


def write_many(c, n, pages=32, start=10.0, step=1.0, length=24):
    for i in range(n):
        c.sim.schedule(start + i * step - c.sim.now, c.master.write, i % pages, length)


def test_write_path_acknowledges_every_record_in_order():
    c = cluster()
    write_many(c, 200)
    c.sim.run(until=2000)
    sal = c.master.sal
    assert sal.cv_lsn == sal.durable_lsn == 200
    assert sorted(c.auditor.lsns()) == list(range(1, 201))
    for s in c.slice_ids:
        assert sal.flush_lsn(s) == c.oracle.max_lsn(s)
        assert sal.fully_replicated(s)
    assert sal.track_persistent_lsns() == 200


def test_database_persistent_lsn_is_monotone_and_bounded():
    c = cluster(seed=3)
    write_many(c, 300, step=2.0)
    c.sim.schedule(150, c.sim.crash, "ps2", 400)
    c.sim.schedule(300, c.sim.partition, MASTER, "ps3", 300)
    seen = []
    t = 0.0
    while t < 6000:  # holes are repaired after the stale-poll window
        t += 25
        c.sim.run(until=t)
        sal = c.master.sal
        seen.append(sal.track_persistent_lsns())
        assert sal.db_persistent_lsn <= sal.durable_lsn
    assert seen == sorted(seen)
    assert seen[-1] == 300


def test_dirty_page_eviction_waits_for_a_page_store():
    c = cluster(slices=1)
    c.master.write(3, 16)
    c.master.flush()
    sal = c.master.sal
    assert not sal.eviction_permitted(3, 1)
    assert sal.eviction_permitted(3, 1, dirty=False)
    c.sim.run(until=100)
    assert sal.eviction_permitted(3, 1)


def test_routed_reads_match_the_oracle():
    c = cluster()
    write_many(c, 120)
    c.sim.run(until=1500)
    sal = c.master.sal
    for page in sorted(c.oracle.by_page):
        lsn = sal.flush_lsn(c.slice_of(page))
        assert c.oracle.matches(sal.read_page_routed(page, lsn), lsn)


def test_truncation_keeps_everything_above_the_persistent_lsn():
    c = cluster(slices=1, plog_size_limit=2048, truncate_with_recycle=False)
    write_many(c, 400, pages=16, length=48)
    c.sim.run(until=3000)
    sal = c.master.sal
    before = len(sal.chain)
    deleted = sal.truncate()
    assert deleted > 0 and len(sal.chain) == before - deleted
    assert sal.log_floor < sal.db_persistent_lsn
    assert c.auditor.audit("test") == 0
    assert len(sal.log_records(None, sal.log_floor, sal.durable_lsn)) == sal.durable_lsn - sal.log_floor


def test_master_restart_continues_the_lsn_sequence():
    c = cluster(seed=5)
    write_many(c, 150, step=3.0)
    c.sim.schedule(200, c.sim.crash, MASTER, 100)
    c.sim.run(until=3000)
    rec = c.master.recoveries
    assert len(rec) == 1 and rec[0]["resent"] <= rec[0]["after_checkpoint"]
    lsns = sorted(c.auditor.lsns())
    assert lsns == list(range(1, len(lsns) + 1))
    sal = c.master.sal
    for page in sorted(c.oracle.by_page):
        lsn = sal.flush_lsn(c.slice_of(page))
        assert c.oracle.matches(sal.read_page_routed(page, lsn), lsn)


class Replicas:
    def __init__(self, down=()):
        self.down = set(down)
        self.calls = []

    def read_page(self, slice_id, page, lsn):
        return ("image", page, lsn)


def test_router_prefers_fast_replicas_and_skips_dead_ones():
    sim, net = new_sim(0, jitter_ms=0.0)
    for n in ("c", "a", "b", "x"):
        sim.add_actor(n, Replicas())
    net.node_latency.update({"a": 5.0, "b": 0.1, "x": 2.0})
    s = SliceId(0, 0)
    router = PageRouter(net, "c", {s: ["a", "b", "x"]}, random.Random(1))
    for _ in range(6):
        router.read(s, 1, 1)
    assert router.order(s)[0] == "b"
    sim.crash("b")
    assert router.read(s, 1, 1) == ("image", 1, 1)
    assert router.order(s)[0] != "b"
    sim.crash("a")
    sim.crash("x")
    with pytest.raises(SliceUnrecoverable):
        router.read(s, 1, 1)
    with pytest.raises(NodeUnavailable):
        net.call("c", "a", "read_page", s, 1, 1)
