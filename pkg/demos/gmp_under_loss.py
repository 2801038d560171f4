"""
GMP on a lossy simulated cluster
================================

Two processes in different racks of the 4-rack topology exchange small
messages and one large one while every link drops 3% of datagrams.
"""

from collections import Counter

import numpy as np

from octkit import builtin_scenario
from octkit.gmp import Deliver, Retransmit
from octkit.node import SimGmpNode

# a 4x8 cluster; 3% per link is roughly 11% per datagram across racks
sc = builtin_scenario("oct4", intra_loss=0.03, inter_loss=0.03, seed=7)
net = sc.build()
src, dst = sc.node_name(0, 0), sc.node_name(3, 7)
a, b = SimGmpNode(net, src), SimGmpNode(net, dst)

events = Counter()
a.add_listener(lambda ev: events.update([type(ev).__name__]))
b.add_listener(lambda ev: events.update([type(ev).__name__]))

# 2000 small messages, all queued at t=0
handles = [a.send(dst, b"hello %d" % i) for i in range(2000)]
net.run()
print("states:", Counter(h.state for h in handles))
print("events:", dict(events))
print("virtual time: %.3f s, datagrams sent %d, dropped %d" % (net.now, net.stats["sent"], net.stats["dropped"]))

# how many transmissions did each message need?  Retransmit carries the attempt count
tries = Counter()
a.add_listener(lambda ev: isinstance(ev, Retransmit) and tries.update([ev.attempts]))
more = [a.send(dst, b"x") for _ in range(2000)]
net.run()
print("retransmissions by attempt number:", dict(sorted(tries.items())))

# a 2 MB message takes the chunked path; the receiver still sees one Deliver
payload = np.random.default_rng(1).integers(0, 256, 2_000_000, dtype=np.uint8).tobytes()
got = []
b.add_listener(lambda ev: isinstance(ev, Deliver) and len(ev.payload) > 100 and got.append(ev.payload))
t0 = net.now
h = a.send(dst, payload)
net.run()
print("large message:", h.state, "intact:", got == [payload], "took %.3f s virtual" % (net.now - t0))

# same seed, same transcript
print("transcript sha256:", net.transcript_hash()[:16], "...")
