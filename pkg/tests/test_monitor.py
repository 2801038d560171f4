import csv
import io
import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octkit.monitor import (REPORT_COLUMNS, InsufficientSamples, LinkLoadReport, MetricsSample, MetricsStore,
                            NoReplica, SampleError, aggregate_link_throughput, detect_underperformers,
                            format_sample, ingest_handler, parse_samples, select_source, status_report)
from octkit.topology import TopologyTree, UnknownNode

from oracles import bottleneck_choice, brute_link_loads, random_tree


@pytest.fixture
def small():
    return TopologyTree({"R": None, "DC1": "R", "DC2": "R", "a": "DC1", "b": "DC1", "c": "DC2"})


def sample(node, tput, at=0.0, cpu=10.0):
    return MetricsSample(node, at, cpu, 1e9, 1e6, tput / 2, tput / 2)


def test_single_flow_loads_its_path_only(small):
    rep = aggregate_link_throughput(small, {("a", "b"): 10})
    nonzero = {e: v for e, v in rep.edges.items() if v}
    assert nonzero == {("a", "DC1"): 10, ("DC1", "b"): 10}


def test_second_flow_adds_along_shared_edge(small):
    rep = aggregate_link_throughput(small, {("a", "b"): 10, ("a", "c"): 5})
    assert rep.load(("a", "DC1")) == 15
    assert rep.load(("DC1", "R")) == rep.load(("R", "DC2")) == rep.load(("DC2", "c")) == 5
    assert rep.node_out["a"] == 15 and rep.node_in["c"] == 5
    assert rep.link_totals(small)["a"] == 15


def test_empty_matrix(small):
    assert not any(aggregate_link_throughput(small, {}).edges.values())


def test_aggregation_rejects_bad_entries(small):
    with pytest.raises(UnknownNode):
        aggregate_link_throughput(small, {("a", "zz"): 1})
    with pytest.raises(UnknownNode):
        aggregate_link_throughput(small, {("a", "DC1"): 1})
    with pytest.raises(ValueError):
        aggregate_link_throughput(small, {("a", "a"): 1})


def test_aggregation_matches_bfs_oracle_on_random_trees():
    rng = random.Random(11)
    for _ in range(100):
        parents = random_tree(rng)
        topo = TopologyTree(parents)
        leaves = topo.leaves
        assert len(leaves) <= 16
        tm = {}
        for _ in range(rng.randint(0, 30)):
            s, d = rng.sample(leaves, 2)
            tm[(s, d)] = tm.get((s, d), 0) + rng.randint(0, 1000)
        got = {e: v for e, v in aggregate_link_throughput(topo, tm).edges.items() if v}
        want = {e: v for e, v in brute_link_loads(parents, tm).items() if v}
        assert got == want


# -- ingestion --------------------------------------------------------------------


def test_ingest_and_ring_buffer():
    store = MetricsStore(["a"])
    store.ingest_sample(sample("a", 1))
    assert len(store.samples("a")) == 1
    for i in range(300):
        store.ingest_sample(sample("a", i, at=float(i)))
    assert len(store.samples("a")) == 256
    assert store.samples("a")[0].at == 300 - 256


def test_ingest_validation():
    store = MetricsStore(["a"])
    with pytest.raises(SampleError):
        store.ingest_sample(MetricsSample("a", 0, 101, 0, 0, 0, 0))
    with pytest.raises(SampleError):
        store.ingest_sample(MetricsSample("a", 0, 1, -1, 0, 0, 0))
    with pytest.raises(UnknownNode):
        store.ingest_sample(sample("zz", 1))


def test_sample_text_roundtrip_and_handler():
    store = MetricsStore(["a", "b"])
    text = "node,at,cpu_pct,mem_bytes,disk_io_bytes_per_s,net_in_bytes_per_s,net_out_bytes_per_s\n"
    text += "\n".join(format_sample(sample(n, 50.0, at=1.5)) for n in ("a", "b"))
    assert parse_samples(text) == [sample("a", 50.0, at=1.5), sample("b", 50.0, at=1.5)]
    assert ingest_handler(store)(text.encode()) == b"ok 2"
    with pytest.raises(SampleError, match="line 1"):
        parse_samples("a,1,2\n")


# -- underperformers --------------------------------------------------------------


def store_with(rounds):
    nodes = sorted(rounds[0])
    store = MetricsStore(nodes)
    for t, r in enumerate(rounds):
        for n in nodes:
            store.ingest_sample(sample(n, r[n], at=t))
    return store


def test_flags_the_slow_node():
    store = store_with([{"a": 100, "b": 98, "c": 102, "d": 40}])
    assert statistics.median([100, 98, 102, 40]) * 0.5 == 49.5
    assert detect_underperformers(store, window=1, threshold=0.5) == {"d"}


def test_equal_nodes_never_flagged():
    assert detect_underperformers(store_with([{"a": 5, "b": 5, "c": 5}] * 3)) == set()


def test_single_node_never_flagged():
    assert detect_underperformers(store_with([{"a": 0.0}] * 3)) == set()


def test_needs_window_samples():
    with pytest.raises(InsufficientSamples):
        detect_underperformers(store_with([{"a": 1, "b": 2}] * 2), window=3)


def test_flag_requires_every_round_in_window():
    rounds = [{"a": 100, "b": 100, "c": 10}, {"a": 100, "b": 100, "c": 90}, {"a": 100, "b": 100, "c": 10}]
    assert detect_underperformers(store_with(rounds), window=3) == set()
    assert detect_underperformers(store_with(rounds), window=1) == {"c"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=3, max_size=8), st.floats(0.01, 1.0), st.integers(1, 3))
def test_lowering_a_flagged_node_keeps_it_flagged(values, factor, window):
    nodes = [f"n{i}" for i in range(len(values))]
    rounds = [dict(zip(nodes, values))] * window
    flagged = detect_underperformers(store_with(rounds), window=window)
    for n in flagged:
        lowered = [dict(r, **{n: r[n] * factor}) for r in rounds]
        assert n in detect_underperformers(store_with(lowered), window=window)


def test_bad_parameters():
    store = store_with([{"a": 1, "b": 1}])
    with pytest.raises(ValueError):
        detect_underperformers(store, window=0)
    with pytest.raises(ValueError):
        detect_underperformers(store, threshold=1.0)


# -- source selection -------------------------------------------------------------


@pytest.fixture
def two_dc():
    return TopologyTree.hierarchical({"dc0": ["a", "r"], "dc1": ["c", "d"]})


def test_prefers_local_replica_over_saturated_uplink(two_dc):
    caps = {e: 100.0 for e in two_dc.edges()}
    report = aggregate_link_throughput(two_dc, {("d", "a"): 95})
    assert select_source(two_dc, {"a", "c"}, "r", report, caps, demand=1) == "a"


def test_single_replica_and_tie_break(two_dc):
    caps = {e: 100.0 for e in two_dc.edges()}
    empty = aggregate_link_throughput(two_dc, {})
    assert select_source(two_dc, {"c"}, "a", empty, caps) == "c"
    assert select_source(two_dc, {"d", "c"}, "a", empty, caps, demand=1) == "c"
    with pytest.raises(NoReplica):
        select_source(two_dc, set(), "a", empty, caps)


def test_bottleneck_beats_hop_count(two_dc):
    caps = {e: 100.0 for e in two_dc.edges()}
    report = aggregate_link_throughput(two_dc, {("r", "c"): 90, ("c", "r"): 90})
    # "r" is one switch away but its access link is busier than the remote path
    report.edges[("r", "dc0")] = 99
    assert select_source(two_dc, {"r", "d"}, "a", report, caps, demand=1) == "d"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_selection_matches_oracle_and_is_scale_free(seed, scale):
    rng = random.Random(seed)
    parents = random_tree(rng)
    topo = TopologyTree(parents)
    leaves = topo.leaves
    requester = rng.choice(leaves)
    replicas = set(rng.sample(leaves, rng.randint(1, len(leaves))))
    caps = {e: float(rng.randint(1, 100)) for e in topo.edges() if rng.random() < 0.9}
    tm = {}
    for _ in range(rng.randint(0, 10)):
        s, d = rng.sample(leaves, 2)
        tm[(s, d)] = float(rng.randint(0, 200))
    demand = float(rng.randint(0, 50))
    rep = aggregate_link_throughput(topo, tm)
    chosen = select_source(topo, replicas, requester, rep, caps, demand)
    assert chosen == bottleneck_choice(parents, replicas, requester, rep.edges, caps, demand)
    scaled = LinkLoadReport({e: v * scale for e, v in rep.edges.items()}, {}, {})
    scaled_caps = {e: v * scale for e, v in caps.items()}
    assert select_source(topo, replicas, requester, scaled, scaled_caps, demand * scale) == chosen


# -- status report ----------------------------------------------------------------


def test_idle_cluster_report(small):
    store = MetricsStore.for_topology(small)
    for n in ("a", "b", "c"):
        store.ingest_sample(sample(n, 1000))
    rows = list(csv.reader(io.StringIO(status_report(store, small))))
    assert rows[0] == REPORT_COLUMNS
    assert {r[-1] for r in rows[1:]} == {"idle"}


def test_busy_node_and_roundtrip(small):
    store = MetricsStore.for_topology(small)
    store.ingest_sample(sample("a", 1000, cpu=95))
    store.ingest_sample(sample("b", 1000))
    report = aggregate_link_throughput(small, {("a", "c"): 90})
    caps = {e: 100.0 for e in small.edges()}
    text = status_report(store, small, report, caps)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == len(small.leaves) + len(small.edges())
    state = {r["id"]: r["state"] for r in rows}
    assert state["a"] == "busy" and state["b"] == "idle" and state["c"] == "nodata"
    assert state["DC1>R"] == "busy" and state["b>DC1"] == "idle"
    assert float(next(r for r in rows if r["id"] == "a>DC1")["load_bytes_per_s"]) == 90


def test_text_report_is_aligned(small):
    store = MetricsStore.for_topology(small)
    lines = status_report(store, small, fmt="text").splitlines()
    assert lines[0].split() == REPORT_COLUMNS
    assert len(lines) == 1 + len(small.leaves) + len(small.edges())
