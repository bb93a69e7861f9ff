import pytest
from hypothesis import given
from hypothesis import strategies as st

from taurus_mini.config import Config
from taurus_mini.core import SliceId
from taurus_mini.logstore import Extent, PLogId
from taurus_mini.replica import (
    BadMessage,
    MasterMessage,
    UnknownTvLsn,
    compute_recycle_lsn,
    decode_master_message,
    encode_master_message,
)
from taurus_mini.simnet.scenario import SimCluster

u32 = st.integers(0, 2**32 - 1)
u64 = st.integers(0, 2**63)
slices = st.builds(SliceId, u32, u32)
extents = st.builds(Extent, st.builds(PLogId, st.text("0123456789abcdef", min_size=32, max_size=32)), u64, u32, u64, u64)
messages = st.builds(
    MasterMessage,
    u64,
    st.lists(extents, max_size=4).map(tuple),
    st.lists(st.tuples(slices, st.booleans()), max_size=3).map(tuple),
    st.lists(st.tuples(slices, u64), max_size=3).map(tuple),
    u64,
    st.floats(0, 1e9, allow_nan=False),
)


@given(messages)
def test_master_message_roundtrip(msg):
    assert decode_master_message(encode_master_message(msg)) == msg


@given(messages, st.data())
def test_damaged_master_message_is_rejected(msg, data):
    buf = bytearray(encode_master_message(msg))
    i = data.draw(st.integers(0, len(buf) - 1))
    buf[i] ^= data.draw(st.integers(1, 255))
    with pytest.raises(BadMessage):
        decode_master_message(bytes(buf))
    with pytest.raises(BadMessage):
        decode_master_message(encode_master_message(msg)[:-1])


@given(st.integers(0, 100), st.integers(0, 100), st.lists(st.integers(0, 100), max_size=4))
def test_recycle_lsn_is_global_minimum_and_never_regresses(current, floor, minima):
    got = compute_recycle_lsn(current, floor, minima)
    assert got >= current
    assert got == current or got == min([floor, *minima])


def replica_cluster(seed=0, **cfg):
    c = SimCluster(Config(**cfg), seed=seed, logstores=6, pagestores=4, slices=2, replicas=1)
    c.start()
    return c, c.replicas["rr1"]


def test_visible_lsn_lands_on_group_boundaries():
    c, rr = replica_cluster()
    m = c.master
    for i in range(60):
        if i % 3 == 0:
            c.sim.schedule(10 + i * 5 - c.sim.now, m.group_write, [i % 20, (i + 7) % 20, 20 + i % 5], b"\x01" * 8)
        else:
            c.sim.schedule(10 + i * 5 - c.sim.now, m.write, i % 20, 12)
    for t in range(20, 600, 7):
        c.sim.run(until=t)
        st_ = rr.state
        assert st_.visible_lsn not in c.oracle.mid_group
        assert st_.visible_lsn <= rr.visibility_limit()
        rr.check_invariants()
    c.sim.run(until=2000)
    assert rr.state.visible_lsn == m.sal.durable_lsn


def test_read_views_pin_a_consistent_snapshot():
    c, rr = replica_cluster(seed=2)
    m = c.master
    for i in range(40):
        c.sim.schedule(10 + i * 4 - c.sim.now, m.write, i % 8, 16)
    c.sim.run(until=120)
    tv = rr.open_read_view()
    assert rr.min_tv() == tv
    c.sim.run(until=1000)
    assert rr.state.visible_lsn > tv
    for page in range(8):
        assert c.oracle.matches(rr.replica_read_page(page, tv), tv)
    rr.release_read_view(tv)
    with pytest.raises(UnknownTvLsn):
        rr.release_read_view(tv)
    with pytest.raises(UnknownTvLsn):
        rr.replica_read_page(0, tv)
    assert rr.min_tv() == rr.state.visible_lsn


def test_pinned_view_holds_back_the_recycle_lsn():
    c, rr = replica_cluster(seed=4, recycle_lag_lsns=0, recycle_interval_ms=100)
    m = c.master
    for i in range(30):
        c.sim.schedule(10 + i * 4 - c.sim.now, m.write, i % 8, 16)
    c.sim.run(until=80)
    tv = rr.open_read_view()
    for i in range(30):
        c.sim.schedule(200 + i * 4 - c.sim.now, m.write, i % 8, 16)
    c.sim.run(until=1500)
    assert m.sal.recycle_lsn <= tv
    for page in range(8):
        assert c.oracle.matches(rr.replica_read_page(page, tv), tv)
    rr.release_read_view(tv)
    c.sim.run(until=2500)
    assert m.sal.recycle_lsn > tv
