"""
MalStone on a small synthetic log
=================================

Generate visit records, look at them as numpy columns, then compute the
per-site ratios with the in-memory reference and with the distributed
executor on a simulated cluster.
"""

import numpy as np

from octkit import builtin_scenario
from octkit.executor import BenchConfig, run_distributed, spread_workers
from octkit.malgen import GenConfig, format_record, format_records, generate_records, malicious_sites, split_bytes
from octkit.malstone import malstone_a, malstone_b

cfg = GenConfig(num_records=50_000, num_entities=3_000, num_sites=400,
                fraction_malicious_sites=0.02, p_compromise=0.25, seed=3)
recs = generate_records(cfg)

# the columns are plain numpy arrays
print(len(recs), "records;", recs.timestamp.dtype, recs.site_id.dtype)
print("first line:", format_record(next(iter(recs))).decode().rstrip())
print("flagged records:", int(recs.flag.sum()))

# site popularity is Zipf-like: the top 10 sites get a large share of visits
visits = np.bincount(recs.site_id.astype(np.int64), minlength=cfg.num_sites)
print("top-10 share of visits: %.1f%%" % (100 * np.sort(visits)[::-1][:10].sum() / visits.sum()))

# MalStone-A: one ratio per site
a = malstone_a(recs)
ratios = np.array([a.ratio(s) for s in sorted(a.keys())])
print("sites:", len(a), " mean ratio %.3f, max %.3f" % (ratios.mean(), ratios.max()))
bad = set(malicious_sites(cfg).tolist())
top = sorted(a.keys(), key=a.ratio, reverse=True)[:5]
print("highest-ratio sites:", top, "malicious:", [s in bad for s in top])

# MalStone-B: weekly cumulative windows; the last one is MalStone-A again
b = malstone_b(recs, 7 * 86400)
print("weekly windows per site:", len(b) // len(a))
print("last window == MalStone-A:", b.last_windows() == a.counts)

# the same computation spread over 8 simulated workers with 1% loss per link
sc = builtin_scenario("oct4", intra_loss=0.01, inter_loss=0.01)
net = sc.build(keep_transcript=False)
run = run_distributed(BenchConfig(mode="B", window_width=7 * 86400),
                      split_bytes(format_records(recs), 8), net, spread_workers(sc, 8))
print("distributed == reference:", run.table.counts == b.counts)
for name, t0, t1 in run.phases:
    print("  %-10s %.4f s" % (name, t1 - t0))
print("dropped datagrams:", net.stats["dropped"])
