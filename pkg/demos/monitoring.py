"""
Cluster monitoring
==================

Per-node samples, link loads from a traffic matrix, a slow-node check and a
bandwidth-aware replica choice, ending in the status report.
"""

import numpy as np

from octkit import builtin_scenario
from octkit.monitor import (MetricsSample, MetricsStore, aggregate_link_throughput, detect_underperformers,
                            select_source, status_report)

sc = builtin_scenario("oct4-constrained", nodes_per_rack=3)
topo = sc.topology()
nodes = topo.leaves
rng = np.random.default_rng(5)

# three rounds of samples; one node is consistently slow
store = MetricsStore.for_topology(topo)
slow = nodes[4]
for t in range(3):
    for n in nodes:
        rate = rng.uniform(40e6, 60e6) * (0.2 if n == slow else 1.0)
        store.ingest_sample(MetricsSample(n, float(t), rng.uniform(10, 90), 4e9, 20e6, rate / 2, rate / 2))
print("underperformers:", detect_underperformers(store, window=3, threshold=0.5))

# every node in rack 0 pulls 2 MB/s from a node in rack 2
tm = {(n, sc.node_name(2, 0)): 2e6 for n in sc.rack_nodes()["dc0"]}
report = aggregate_link_throughput(topo, tm)
for e in topo.edges():
    if report.load(e):
        print("  %-14s %.1f MB/s" % ("%s>%s" % e, report.load(e) / 1e6))

# a rack-1 node needs a partition held in racks 0 and 2; rack 0's uplink is busy
caps = sc.capacities()
pick = select_source(topo, [sc.node_name(0, 1), sc.node_name(2, 1)], sc.node_name(1, 0), report, caps, demand=1e6)
print("replica chosen:", pick)

# the full report has a row per node and per directed edge; show the busy part
text = status_report(store, topo, report, caps, fmt="text").splitlines()
print("\n".join(ln for ln in text if not ln.startswith("edge") or ln.split()[2] != "0"))
