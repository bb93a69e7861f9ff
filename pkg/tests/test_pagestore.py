import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from taurus_mini.config import Config
from taurus_mini.core import Delta, FullImage, LogFragment, LogRecord, PageImage, SliceId
from taurus_mini.pagestore import (
    BelowRecycleLsn,
    BufferPool,
    IntervalSet,
    LogCache,
    NotCaughtUp,
    PageStoreNode,
    PeerUnavailable,
    RecycleLsnRegression,
    UnknownSlice,
)
from taurus_mini.pagestore.logcache import LONGEST_CHAIN_FIRST, CachedFragment
from taurus_mini.pagestore.slicelog import (
    BaseBlock,
    RecycleBlock,
    encode_base_block,
    encode_fragment_block,
    encode_page_block,
    encode_recycle_block,
    scan_blocks,
)
from taurus_mini.rpc import LocalRpc
from taurus_mini.storage import AppendOnlyFS

S = SliceId(0, 0)
PAGE_SIZE = 32
CFG = Config(page_size=PAGE_SIZE, pages_per_slice=8, buffer_pool_pages=4, log_cache_fragments=4)


def rec(lsn, page, data=None, offset=0, group_end=True):
    data = data if data is not None else bytes([lsn % 256]) * 3
    return LogRecord(S, page, lsn, Delta(offset, data), group_end)


def frag(records, lo, hi, seq=1):
    return LogFragment(S, seq, tuple(records), lo, hi, frozenset(r.lsn for r in records if r.group_end))


def replay(records, page, lsn):
    buf = bytearray(PAGE_SIZE)
    version = 0
    for r in sorted(records, key=lambda r: r.lsn):
        if r.page == page and r.lsn <= lsn:
            buf[r.op.offset : r.op.offset + len(r.op.data)] = r.op.data
            version = r.lsn
    return PageImage(page, version, bytes(buf))


def node(node_id="ps1", fs=None, cfg=CFG, rpc=None, peers=()):
    n = PageStoreNode(node_id, cfg, fs or AppendOnlyFS(), rpc=rpc, peers_of=lambda s: list(peers))
    n.host_slice(S)
    return n


# interval sets


intervals = st.lists(st.tuples(st.integers(0, 60), st.integers(0, 60)), max_size=12)


@given(intervals, st.integers(0, 60), st.integers(0, 60))
def test_interval_set_matches_set_model(ivs, lo, hi):
    model = set()
    s = IntervalSet()
    for a, b in ivs:
        added = s.add(a, b)
        new = set(range(a + 1, b + 1))
        assert added == bool(new - model)
        model |= new
    for lsn in range(0, 62):
        assert s.contains(lsn) == (lsn in model)
    prefix = 0
    while prefix + 1 in model:
        prefix += 1
    assert s.prefix_end(0) == prefix
    assert s.max == max(model, default=0)
    missing = {x for a, b in s.missing(lo, hi) for x in range(a + 1, b + 1)}
    assert missing == set(range(lo + 1, hi + 1)) - model
    covered = {x for a, b in s.intersect(lo, hi) for x in range(a + 1, b + 1)}
    assert covered == set(range(lo + 1, hi + 1)) & model
    gaps = {x for a, b in s.gaps(prefix) for x in range(a + 1, b + 1)}
    assert gaps == set(range(prefix + 1, s.max + 1)) - model
    # merged intervals never touch
    pairs = list(s)
    assert all(b1 < a2 for (_, b1), (a2, _) in zip(pairs, pairs[1:]))
    assert s.copy() == s


# buffer pool


def img(page, version=1):
    return PageImage(page, version, bytes(4))


def test_lru_evicts_least_recently_used():
    pool = BufferPool(2, "lru")
    pool.put("a", img(1))
    pool.put("b", img(2))
    pool.get("a")
    pool.put("c", img(3))
    assert "b" not in pool and "a" in pool and "c" in pool


def test_lfu_evicts_least_frequently_used():
    pool = BufferPool(2, "lfu", aging_interval=0)
    pool.put("a", img(1))
    pool.put("b", img(2))
    pool.get("a")
    pool.get("b")
    pool.get("b")
    pool.get("a")
    pool.get("b")
    pool.put("c", img(3))
    assert "a" not in pool and "b" in pool


def test_dirty_page_is_persisted_before_eviction():
    flushed = []
    pool = BufferPool(1, "lru", on_evict_dirty=lambda k, i: flushed.append((k, i.version)))
    pool.put("a", img(1, 5), dirty=True)
    pool.put("b", img(2))
    assert flushed == [("a", 5)]
    zero = BufferPool(0, "lfu", on_evict_dirty=lambda k, i: flushed.append((k, i.version)))
    zero.put("c", img(3, 7), dirty=True)
    assert flushed[-1] == ("c", 7) and len(zero) == 0
    with pytest.raises(ValueError):
        BufferPool(4, "fifo")


def test_mark_clean_only_for_same_version():
    pool = BufferPool(4)
    pool.put("a", img(1, 3), dirty=True)
    pool.mark_clean("a", 2)
    assert pool.dirty_items()
    pool.mark_clean("a", 3)
    assert not pool.dirty_items()


# log cache


def cached(key, lsn):
    return CachedFragment(key, S, 0, frag([rec(lsn, 0)], lsn - 1, lsn))


def test_log_cache_centric_spills_then_refills_in_order():
    lc = LogCache(2)
    assert lc.admit(cached(1, 1)) and lc.admit(cached(2, 2))
    assert not lc.admit(cached(3, 3))
    assert not lc.admit(cached(4, 4))
    assert lc.spills == 2 and not lc.is_resident(S, 3)
    lc.release(1)
    assert lc.refill() == 1 and lc.is_resident(S, 3) and not lc.is_resident(S, 4)
    # a hole-filling fragment displaces the newest resident
    assert lc.admit(cached(5, 5), priority=True)
    assert lc.is_resident(S, 5) and not lc.is_resident(S, 3)


def test_longest_chain_cache_drops_oldest():
    lc = LogCache(2, LONGEST_CHAIN_FIRST)
    for k in (1, 2, 3):
        assert lc.admit(cached(k, k))
    assert not lc.is_resident(S, 1) and lc.evictions == 1


# slice log blocks


def test_slice_log_blocks_roundtrip_and_stop_at_torn_tail():
    f = frag([rec(2, 1), rec(3, 2, group_end=False)], 1, 4, seq=9)
    p = PageImage(1, 3, b"x" * PAGE_SIZE)
    buf = encode_fragment_block(f) + encode_page_block(p) + encode_base_block(5, [p]) + encode_recycle_block(4)
    blocks = [b for _, b in scan_blocks(buf, S)]
    assert blocks == [f, p, BaseBlock(5, (p,)), RecycleBlock(4)]
    assert [b for _, b in scan_blocks(buf[:-1], S)] == blocks[:3]
    corrupt = bytearray(buf)
    corrupt[12] ^= 0xFF
    assert list(scan_blocks(bytes(corrupt), S)) == []


# page store node


def test_persistent_lsn_and_gaps_follow_coverage():
    ps = node()
    ps.write_logs(S, frag([rec(1, 0), rec(2, 1)], 0, 2))
    ack = ps.write_logs(S, frag([rec(6, 0)], 5, 6, seq=3))
    assert ack.persistent_lsn == 2 and ack.last_seq == 3
    assert ps.get_gap_ranges(S) == [(3, 5)]
    ack = ps.write_logs(S, frag([rec(4, 1)], 2, 5, seq=2))
    assert ack.persistent_lsn == 6 and ps.get_gap_ranges(S) == []
    dup = ps.write_logs(S, frag([rec(4, 1)], 2, 5, seq=2))
    assert dup.persistent_lsn == 6 and ps.metrics["duplicateFragments"] == 1
    with pytest.raises(UnknownSlice):
        ps.write_logs(SliceId(0, 9), frag([], 0, 1))


def test_versioned_reads_before_and_after_consolidation():
    ps = node()
    records = [rec(i, i % 3, offset=i % 7) for i in range(1, 13)]
    ps.write_logs(S, frag(records, 0, 12))
    for lsn in range(0, 13):
        for page in range(3):
            assert ps.read_page(S, page, lsn) == replay(records, page, lsn)
    while ps.consolidate_step():
        pass
    ps.flush_dirty_pages()
    assert ps.pending_records() == 0
    for lsn in range(0, 13):
        for page in range(3):
            assert ps.read_page(S, page, lsn) == replay(records, page, lsn)
    with pytest.raises(NotCaughtUp):
        ps.read_page(S, 0, 13)


def test_recycle_lsn_bounds_reads_and_never_regresses():
    ps = node()
    records = [rec(i, 0, offset=i) for i in range(1, 9)]
    ps.write_logs(S, frag(records, 0, 8))
    while ps.consolidate_step():
        pass
    ps.flush_dirty_pages()
    ps.set_recycle_lsn(S, 5)
    with pytest.raises(BelowRecycleLsn):
        ps.read_page(S, 0, 4)
    for lsn in range(5, 9):
        assert ps.read_page(S, 0, lsn) == replay(records, 0, lsn)
    with pytest.raises(RecycleLsnRegression):
        ps.set_recycle_lsn(S, 3)


def test_restart_rebuilds_identical_state_from_slice_log():
    fs = AppendOnlyFS()
    ps = node(fs=fs)
    records = [rec(i, i % 4, offset=i % 5) for i in range(1, 21)]
    ps.write_logs(S, frag(records[:10], 0, 10))
    ps.consolidate_step()
    ps.flush_dirty_pages()
    ps.write_logs(S, frag(records[12:], 12, 20, seq=3))
    ps.set_recycle_lsn(S, 4)
    before = ps.status(S)
    ps.on_crash()
    ps.on_restart()
    assert ps.status(S) == before
    ps.write_logs(S, frag(records[10:12], 10, 12, seq=2))
    for lsn in range(4, 21):
        for page in range(4):
            assert ps.read_page(S, page, lsn) == replay(records, page, lsn)


def test_gossip_fills_holes_both_ways():
    fs = AppendOnlyFS()
    rpc = LocalRpc()
    a = node("ps1", fs, rpc=rpc, peers=["ps1", "ps2"])
    b = node("ps2", fs, rpc=rpc, peers=["ps1", "ps2"])
    rpc.register("ps1", a)
    rpc.register("ps2", b)
    records = [rec(i, i % 2) for i in range(1, 7)]
    a.write_logs(S, frag(records[:2], 0, 2))
    a.write_logs(S, frag(records[4:], 4, 6, seq=3))
    b.write_logs(S, frag(records[:4], 0, 4))
    moved = a.gossip_round(S, "ps2")
    assert moved == 4  # two records each way
    assert a.get_persistent_lsn(S) == b.get_persistent_lsn(S) == 6
    for page in range(2):
        assert a.read_page(S, page, 6) == b.read_page(S, page, 6) == replay(records, page, 6)
    assert a.gossip_round(S, "ps2") == 0
    with pytest.raises(PeerUnavailable):
        a.gossip_round(S, "ps9")


def test_rebuild_copies_latest_pages_and_continues_from_base():
    fs = AppendOnlyFS()
    rpc = LocalRpc()
    src = node("ps1", fs, rpc=rpc)
    dst = PageStoreNode("ps2", CFG, fs, rpc=rpc)
    rpc.register("ps1", src)
    rpc.register("ps2", dst)
    records = [rec(i, i % 3) for i in range(1, 8)]
    src.write_logs(S, frag(records, 0, 7))
    dst.host_slice(S, rebuild=True)
    with pytest.raises(NotCaughtUp):
        dst.read_page(S, 0, 0)
    assert dst.complete_rebuild(S, "ps1") == 7
    assert dst.get_persistent_lsn(S) == 7
    more = [rec(8, 0), rec(9, 1)]
    dst.write_logs(S, frag(more, 7, 9))
    for page in range(3):
        assert dst.read_page(S, page, 9) == replay(records + more, page, 9)
    with pytest.raises(NotCaughtUp):
        dst.read_page(S, 0, 5)  # history below the base was never copied


ops = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, PAGE_SIZE - 1), st.binary(min_size=1, max_size=6), st.booleans()),
    min_size=1,
    max_size=30,
)


@given(ops, st.integers(1, 5), st.randoms(use_true_random=False))
def test_reads_match_replay_under_any_delivery_order(writes, pieces, rnd):
    """Fragments in any order, with consolidation, flushes and a restart mixed in."""
    records = []
    for lsn, (page, off, data, full) in enumerate(writes, 1):
        op = FullImage(bytes([lsn % 256]) * PAGE_SIZE) if full else Delta(off, data[: PAGE_SIZE - off])
        records.append(LogRecord(S, page, lsn, op))
    n = len(records)
    cuts = sorted(rnd.sample(range(1, n), min(pieces - 1, n - 1))) if n > 1 else []
    bounds = [0, *cuts, n]
    frags = [frag(records[a:b], a, b, seq=i + 1) for i, (a, b) in enumerate(zip(bounds, bounds[1:]))]
    rnd.shuffle(frags)
    ps = node(fs=AppendOnlyFS())
    for i, f in enumerate(frags):
        ps.write_logs(S, f)
        if rnd.random() < 0.5:
            ps.consolidate_step(rnd.randint(1, 3))
        if rnd.random() < 0.3:
            ps.flush_dirty_pages()
        if i == len(frags) // 2 and rnd.random() < 0.5:
            ps.on_crash()
            ps.on_restart()
    assert ps.get_persistent_lsn(S) == n

    def model(page, lsn):
        buf = bytearray(PAGE_SIZE)
        version = 0
        for r in records[:lsn]:
            if r.page == page:
                if isinstance(r.op, FullImage):
                    buf[:] = r.op.data
                else:
                    buf[r.op.offset : r.op.offset + len(r.op.data)] = r.op.data
                version = r.lsn
        return PageImage(page, version, bytes(buf))

    for lsn in range(n + 1):
        for page in range(4):
            assert ps.read_page(S, page, lsn) == model(page, lsn)
