import pytest

from octkit.netsim import (LinkSpec, Scenario, ScenarioError, SimNet, builtin_scenario, load_scenario,
                           parse_scenario)
from octkit.node import SimGmpNode
from octkit.topology import TopologyTree, UnknownNode


def pair(link):
    topo = TopologyTree({"sw": None, "a": "sw", "b": "sw"})
    # only the a-side link carries the settings; the other is ideal
    return SimNet(topo, {"a": link, "b": LinkSpec()}, seed=1)


def arrivals(net):
    return [(float(ln.split()[0]), int(ln.split()[4])) for ln in net.transcript if " arrive " in ln]


def test_single_datagram_additive_latency():
    net = pair(LinkSpec(latency=0.010))
    net.submit("a", "b", bytes(1412))
    net.advance(1.0)
    assert arrivals(net) == [(pytest.approx(0.010), 1412)]


def test_certain_loss_never_arrives():
    net = pair(LinkSpec(loss_prob=1.0))
    for _ in range(20):
        net.submit("a", "b", b"x")
    net.advance(10.0)
    assert arrivals(net) == []
    assert net.stats["dropped"] == 20


def test_serialization_queueing_on_slow_edge():
    net = pair(LinkSpec(bandwidth=1e6))
    net.submit("a", "b", bytes(1_000_000))
    net.submit("a", "b", bytes(1_000_000))
    net.advance(5.0)
    assert [t for t, _ in arrivals(net)] == [pytest.approx(1.0), pytest.approx(2.0)]


def test_advance_on_empty_queue_moves_clock():
    net = pair(LinkSpec())
    assert net.advance(3.5) == []
    assert net.now == 3.5
    with pytest.raises(ValueError):
        net.advance(1.0)


def test_unknown_node_rejected():
    net = pair(LinkSpec())
    with pytest.raises(UnknownNode):
        net.submit("a", "zz", b"")


def test_ping_rtt_is_two_traversals():
    topo = TopologyTree({"sw": None, "a": "sw", "b": "sw"})
    net = SimNet(topo, {"a": LinkSpec(latency=0.010), "b": LinkSpec()})
    a, _ = SimGmpNode(net, "a"), SimGmpNode(net, "b")
    h = a.send("b", b"ping")
    net.run(until=h.future.done)
    assert h.acked
    assert net.now == pytest.approx(0.020)


def _lossy_run(seed):
    sc = builtin_scenario("oct4", intra_loss=0.05, inter_loss=0.05, reorder_jitter=0.002, duplicate_prob=0.01)
    net = sc.build(seed=seed)
    a, b = SimGmpNode(net, "dc0-n00"), SimGmpNode(net, "dc2-n03")
    hs = [a.send("dc2-n03", bytes([i]) * (i + 1)) for i in range(200)]
    net.run()
    return net, hs


def test_same_seed_same_transcript():
    n1, _ = _lossy_run(5)
    n2, _ = _lossy_run(5)
    n3, _ = _lossy_run(6)
    assert n1.transcript == n2.transcript
    assert n1.transcript_hash() == n2.transcript_hash()
    assert n1.transcript_hash() != n3.transcript_hash()


def test_conservation_and_causality():
    net, hs = _lossy_run(2)
    sent = dropped = arrived = dup = 0
    last = 0.0
    for line in net.transcript:
        t, kind = line.split()[:2]
        t = float(t)
        if kind in ("arrive", "timer"):
            assert t >= last
            last = t
        sent += kind == "send"
        dropped += kind == "drop"
        arrived += kind == "arrive"
        dup += kind == "dup"
    assert sent == dropped + arrived - dup
    assert net.stats["duplicated"] == dup > 0
    assert sum(h.acked for h in hs) > 190


def test_oct4_default_shape():
    sc = load_scenario("oct4")
    topo = sc.topology()
    assert (sc.racks, sc.nodes_per_rack) == (4, 8)
    assert len(topo.leaves) == 32
    assert topo.root == "core"
    assert {topo.depth[n] for n in topo.leaves} == {2}


def test_zero_nodes_per_rack_rejected():
    with pytest.raises(ScenarioError, match="nodes_per_rack"):
        Scenario(nodes_per_rack=0)
    with pytest.raises(ScenarioError, match=r"cfg:2: .*nodes_per_rack"):
        parse_scenario("racks = 2\nnodes_per_rack = 0\n", "cfg")


def test_scenario_file_diagnostics():
    with pytest.raises(ScenarioError, match=r"s\.cfg:3: unknown field 'bogus'"):
        parse_scenario("racks = 2\n# comment\nbogus = 1\n", "s.cfg")
    with pytest.raises(ScenarioError, match=r"s\.cfg:1: field inter_loss"):
        parse_scenario("inter_loss = lots\n", "s.cfg")
    with pytest.raises(ScenarioError, match=r"s\.cfg:2: inter_loss: must be in"):
        parse_scenario("racks = 2\ninter_loss = 1.5\n", "s.cfg")
    with pytest.raises(ScenarioError, match=r"s\.cfg:1: expected"):
        parse_scenario("racks 2\n", "s.cfg")


def test_constrained_fixture_file(tmp_path):
    path = tmp_path / "constrained.cfg"
    path.write_text("base = oct4\n# inter-rack links get a tenth of the intra-rack bandwidth\n"
                    "intra_bandwidth = 125e6\ninter_bandwidth = 12.5e6\ninter_latency_ms = 10,20,30,40\n")
    sc = load_scenario(path)
    assert sc.inter_bandwidth * 10 == sc.intra_bandwidth
    assert [sc.inter_spec(r).latency for r in range(4)] == pytest.approx([0.01, 0.02, 0.03, 0.04])
    assert parse_scenario(sc.to_config()) == sc.with_(name=sc.name)


def test_latency_range_is_sampled_within_bounds():
    net = pair(LinkSpec(latency=(0.030, 0.070)))
    for _ in range(200):
        net.submit("a", "b", b"x")
    net.advance(1.0)
    ts = [t for t, _ in arrivals(net)]
    assert len(ts) == 200 and min(ts) >= 0.030 and max(ts) <= 0.070


def test_linkspec_validation():
    with pytest.raises(ValueError):
        LinkSpec(loss_prob=1.5)
    with pytest.raises(ValueError):
        LinkSpec(latency=-0.1)
