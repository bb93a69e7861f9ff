import os
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from taurus_mini.config import Config
from taurus_mini.core import SliceId
from taurus_mini.logstore import FailureClass
from taurus_mini.rpc import NodeUnavailable, RpcTimeout
from taurus_mini.simnet.cluster import NoCandidateNode
from taurus_mini.simnet.engine import Simulation, new_sim
from taurus_mini.simnet.scenario import (
    GeneratorParams,
    ScenarioParseError,
    SimCluster,
    bundled_scenarios,
    generate_workload,
    load_scenario,
    parse_scenario,
    run_scenario,
)


class Echo:
    def __init__(self):
        self.seen = []

    def ping(self, x):
        self.seen.append(x)
        return x * 2


# event engine


@given(st.lists(st.floats(0, 100, allow_nan=False), max_size=40))
def test_events_run_in_time_then_insertion_order(delays):
    sim = Simulation()
    out = []
    for i, d in enumerate(delays):
        sim.schedule(d, out.append, (d, i))
    sim.run()
    assert out == sorted(out)


def test_crashed_node_drops_timers_from_before_the_crash():
    sim = Simulation()
    sim.add_actor("a", Echo())
    fired = []
    sim.set_timer("a", 10, fired.append, "old")
    sim.crash("a", duration=5)
    sim.schedule(6, lambda: sim.set_timer("a", 10, fired.append, "new"))
    sim.run()
    assert fired == ["new"]


def test_hung_node_postpones_its_work():
    sim = Simulation()
    sim.add_actor("a", Echo())
    at = []
    sim.hang("a", 50)
    sim.set_timer("a", 10, lambda: at.append(sim.now))
    sim.run()
    assert at == [50.0]


def test_nested_crashes_need_matching_restarts():
    sim = Simulation()
    sim.add_actor("a", Echo())
    sim.crash("a")
    sim.crash("a")
    sim.restart("a")
    assert sim.is_crashed("a")
    sim.restart("a")
    assert sim.is_up("a")
    sim.remove("a")
    sim.restart("a")
    assert not sim.is_up("a")


def test_network_faults():
    sim, net = new_sim(1)
    echo = Echo()
    sim.add_actor("a", Echo())
    sim.add_actor("b", echo)
    assert net.call("a", "b", "ping", 3) == 6
    sim.partition("a", "b", duration=10)
    with pytest.raises(NodeUnavailable):
        net.call("a", "b", "ping", 1)
    sim.run()
    assert net.call("a", "b", "ping", 1) == 2
    sim.drop_messages("b", 1, "ping")
    with pytest.raises(RpcTimeout):
        net.call("a", "b", "ping", 1)
    sim.hang("b", 5)
    with pytest.raises(RpcTimeout):
        net.call("a", "b", "ping", 1)


def test_send_delivers_after_latency_and_replies():
    sim, net = new_sim(2, latency_ms=3.0, jitter_ms=0.0)
    sim.add_actor("a", Echo())
    sim.add_actor("b", Echo())
    replies = []
    net.send("a", "b", "ping", 5, on_reply=lambda r: replies.append((sim.now, r)))
    sim.run()
    assert replies == [(6.0, 10)]
    net.send("a", "b", "ping", 5, on_reply=replies.append)
    sim.crash("a")
    sim.run()
    assert len(replies) == 1  # the reply is lost with the sender's incarnation


# scenario language


def test_parser_accepts_the_full_grammar():
    sc = parse_scenario(
        """
        # comment
        CLUSTER logstores=6 pagestores=4 slices=2
        CONFIG gossip_interval_ms=500
        AT 5 EVERY 2 UNTIL 9 WRITE page=1 len=8   # trailing comment
        AT 10 CRASH node=ps1 FOR 100
        AT 11 PARTITION master ls1 FOR 5
        AT 12 CHECK oracle
        RUN_UNTIL 200
        """
    )
    assert sc.cluster == {"logstores": "6", "pagestores": "4", "slices": "2"}
    assert sc.run_until == 200
    assert [e.command.name for e in sc.events] == ["WRITE", "CRASH", "PARTITION", "CHECK"]
    assert sc.events[0].every == 2 and sc.events[0].until == 9
    assert sc.events[1].command.get("for") == "100"
    assert sc.events[2].command.positional == ("master", "ls1")


@pytest.mark.parametrize(
    "text",
    [
        "AT x WRITE page=1",
        "AT 5 FROB",
        "AT 5 CRASH",
        "AT 5 PARTITION a",
        "AT 5 CHECK",
        "AT 5 EVERY 0 UNTIL 9 WRITE page=1",
        "AT 5 EVERY 1 WRITE page=1",
        "AT -1 WRITE page=1",
        "CLUSTER logstores",
        "RUN_UNTIL",
        "WRITE page=1",
    ],
)
def test_parser_rejects_malformed_lines(text):
    with pytest.raises(ScenarioParseError, match="line 1"):
        parse_scenario(text)


def test_unknown_cluster_key_is_rejected():
    with pytest.raises(ScenarioParseError):
        run_scenario(parse_scenario("CLUSTER racks=2\nRUN_UNTIL 1"), 0)


def test_empty_scenario_gives_an_empty_trace():
    r = run_scenario(parse_scenario("RUN_UNTIL 0"), 0, settle_ms=0)
    assert r.ok and r.reads_ok == 0
    assert not any(" write" in line or "crash" in line for line in r.trace)


def test_same_seed_same_trace_different_seed_differs():
    sc = load_scenario(bundled_scenarios()["fig5a"])
    a = run_scenario(sc, 3)
    b = run_scenario(sc, 3)
    c = run_scenario(sc, 4)
    assert a.trace_hash == b.trace_hash and a.trace == b.trace
    assert a.trace_hash != c.trace_hash


def test_trace_does_not_depend_on_hash_randomisation():
    code = (
        "from taurus_mini.simnet.scenario import *\n"
        "p = GeneratorParams(pages=16, slices=2, writes=150, duration_ms=1500, fault_rate=2, reads=20, settle_ms=3000)\n"
        "print(run_scenario(generate_workload(5, p), 5).trace_hash)\n"
    )
    hashes = set()
    for salt in ("1", "2", "77"):
        env = {**os.environ, "PYTHONHASHSEED": salt}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        hashes.add(out.stdout.strip())
    assert len(hashes) == 1


def test_generated_workload_is_seeded():
    p = GeneratorParams(pages=8, slices=2, writes=50, duration_ms=1000, reads=5)
    a, b = generate_workload(1, p), generate_workload(1, p)
    assert a.events == b.events
    assert generate_workload(2, p).events != a.events
    assert sum(e.command.name in ("WRITE", "GROUP_WRITE") for e in a.events) == 50


def test_small_generated_run_with_faults_and_replicas():
    p = GeneratorParams(pages=16, slices=2, writes=300, duration_ms=3000, fault_rate=1.0, reads=40, replicas=1, views=30, settle_ms=8000)
    r = run_scenario(generate_workload(9, p), 9, keep_trace=False)
    assert r.ok, r.first_failure()
    assert r.reads_ok > 0


# cluster manager


def quiet_cluster(pagestores=4, slices=1, **cfg):
    config = Config(**cfg)
    c = SimCluster(config, seed=0, logstores=6, pagestores=pagestores, slices=slices)
    c.start()
    return c


def classes(c, node):
    return [k.failure for k in c.cm.classify_failures() if k.node == node]


def test_round_robin_initial_placement():
    c = quiet_cluster(pagestores=5, slices=3)
    assert [c.cm.placement[s] for s in c.slice_ids] == [
        ["ps1", "ps2", "ps3"],
        ["ps4", "ps5", "ps1"],
        ["ps2", "ps3", "ps4"],
    ]


def test_short_outage_is_short_term_and_recovers():
    c = quiet_cluster()
    c.sim.schedule(100, c.sim.crash, "ps4", 2000)
    c.sim.run(until=6000)
    assert classes(c, "ps4") == [FailureClass.SHORT_TERM]
    assert c.cm.is_healthy("ps4")
    assert "ps4" not in c.sim.removed


def test_long_outage_reassigns_and_rebuilds():
    c = quiet_cluster(slices=2)
    c.sim.schedule(100, c.sim.crash, "ps1")
    c.sim.run(until=10_000)
    assert classes(c, "ps1") == [FailureClass.SHORT_TERM, FailureClass.LONG_TERM]
    assert all("ps1" not in nodes for nodes in c.cm.placement.values())
    # each slice ps1 held went to a different survivor
    assert c.cm.rebuilds_completed == 2
    assert "ps1" in c.cm.retired


def test_flapping_node_never_reaches_long_term():
    c = quiet_cluster()
    for k in range(8):
        c.sim.schedule(100 + k * 3000, c.sim.crash, "ps2", 2500)
    c.sim.run(until=26_000)
    assert FailureClass.LONG_TERM not in classes(c, "ps2")
    assert classes(c, "ps2").count(FailureClass.SHORT_TERM) >= 5


def test_replacement_needs_a_candidate():
    c = quiet_cluster(pagestores=3)
    s = c.slice_ids[0]
    with pytest.raises(NoCandidateNode):
        c.cm.replace_pagestore_replica(s, "ps1")
    c4 = quiet_cluster(pagestores=4)
    assert c4.cm.replace_pagestore_replica(c4.slice_ids[0], "ps1") == "ps4"
    assert c4.cm.placement[c4.slice_ids[0]] == ["ps4", "ps2", "ps3"]
    assert SliceId(0, 0) in c4.page_stores["ps4"].slices
