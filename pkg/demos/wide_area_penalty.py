"""
Wide-area penalty
=================

The same job on one rack versus spread over four racks whose uplinks are
ten times slower than the rack links.  Fetching remote partitions through
the core is what costs time, so the choice of replica matters.
"""

from octkit import builtin_scenario
from octkit.executor import simbench, simbench_report
from octkit.malgen import GenConfig, format_records, generate_records, split_bytes

data = format_records(generate_records(GenConfig(100_000, 10_000, 1_000, seed=0)))
parts = split_bytes(data, 28)

local = builtin_scenario("local28")
wide = builtin_scenario("oct4-constrained")
print("rack links %.0f MB/s, uplinks %.1f MB/s" % (wide.intra_bandwidth / 1e6, wide.inter_bandwidth / 1e6))

res = simbench(parts, local, wide, per_rack=7, compute_rate=50_000)
print(simbench_report(res))

# where did the bytes go?  busiest uplinks for each source policy
topo = wide.topology()
for name in ("distributed-naive", "distributed-balanced"):
    lb = res.runs[name].link_bytes
    up = sorted(((v, e) for e, v in lb.items() if topo.root in e), reverse=True)[:3]
    print(name, "busiest uplinks:", ", ".join("%s>%s %.1f MB" % (e[0], e[1], v / 1e6) for v, e in up))

print("naive %.1f%% > balanced %.1f%%" % (100 * res.penalty("distributed-naive"),
                                          100 * res.penalty("distributed-balanced")))
