"""Resource monitoring over a hierarchical topology.

Per-node metric histories, link-throughput aggregation along unique tree
paths, underperformer detection against a robust peer baseline, bandwidth
aware replica selection, and a CSV/text status report.
"""

from __future__ import annotations

import csv
import io
import statistics
import threading
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import astuple, dataclass, fields
from fractions import Fraction

from .topology import Edge, TopologyTree, UnknownNode

__all__ = [
    "MetricsSample", "MetricsStore", "LinkLoadReport", "NodeCapacity", "InsufficientSamples",
    "NoReplica", "SampleError", "aggregate_link_throughput", "detect_underperformers",
    "select_source", "status_report", "parse_samples", "format_sample", "ingest_handler",
    "REPORT_COLUMNS",
]


class SampleError(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class NoReplica(ValueError):
    pass


@dataclass(frozen=True)
class MetricsSample:
    node: str
    at: float
    cpu_pct: float
    mem_bytes: float
    disk_io_bytes_per_s: float
    net_in_bytes_per_s: float
    net_out_bytes_per_s: float

    def validate(self) -> None:
        if not 0.0 <= self.cpu_pct <= 100.0:
            raise SampleError(f"{self.node}: cpu_pct {self.cpu_pct} outside [0, 100]")
        for name in ("mem_bytes", "disk_io_bytes_per_s", "net_in_bytes_per_s", "net_out_bytes_per_s"):
            if getattr(self, name) < 0:
                raise SampleError(f"{self.node}: {name} must be >= 0")

    @property
    def throughput(self) -> float:
        return self.net_in_bytes_per_s + self.net_out_bytes_per_s


SAMPLE_COLUMNS = [f.name for f in fields(MetricsSample)]


def format_sample(s: MetricsSample) -> str:
    return ",".join([s.node] + [f"{v:g}" for v in astuple(s)[1:]])


def parse_samples(text: str) -> list[MetricsSample]:
    """Newline-delimited ``node,at,cpu,mem,disk,net_in,net_out`` records.

    A header line and ``#`` comments are skipped.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("node,"):
            continue
        parts = line.split(",")
        if len(parts) != len(SAMPLE_COLUMNS):
            raise SampleError(f"line {lineno}: expected {len(SAMPLE_COLUMNS)} fields, got {len(parts)}")
        try:
            out.append(MetricsSample(parts[0], *map(float, parts[1:])))
        except ValueError:
            raise SampleError(f"line {lineno}: non-numeric field") from None
    return out


class MetricsStore:
    """Bounded per-node sample histories; safe for concurrent producers."""

    def __init__(self, nodes: Iterable[str], history: int = 256):
        self.history = history
        self._data: dict[str, deque[MetricsSample]] = {n: deque(maxlen=history) for n in nodes}
        self._lock = threading.Lock()

    @classmethod
    def for_topology(cls, topo: TopologyTree, history: int = 256) -> MetricsStore:
        return cls(topo.leaves, history)

    @property
    def nodes(self) -> list[str]:
        return sorted(self._data)

    def ingest_sample(self, s: MetricsSample) -> None:
        if s.node not in self._data:
            raise UnknownNode(s.node)
        s.validate()
        with self._lock:
            self._data[s.node].append(s)

    def samples(self, node: str) -> list[MetricsSample]:
        with self._lock:
            return list(self._data[node])

    def latest(self, node: str) -> MetricsSample | None:
        with self._lock:
            h = self._data[node]
            return h[-1] if h else None

    def snapshot(self) -> dict[str, list[MetricsSample]]:
        with self._lock:
            return {n: list(h) for n, h in self._data.items()}


def ingest_handler(store: MetricsStore):
    """RPC handler for ``monitor.ingest``: newline-delimited sample records."""

    def handle(body: bytes) -> bytes:
        samples = parse_samples(body.decode())
        for s in samples:
            store.ingest_sample(s)
        return f"ok {len(samples)}".encode()

    return handle


# -- link aggregation --------------------------------------------------------------


@dataclass
class LinkLoadReport:
    edges: dict[Edge, float]
    node_out: dict[str, float]
    node_in: dict[str, float]

    def load(self, edge: Edge) -> float:
        return self.edges.get(edge, 0)

    def link_totals(self, topo: TopologyTree) -> dict[str, float]:
        """Both directions of each link summed, keyed by the link's child vertex."""
        out = {c: 0 for c in topo.links()}
        for e, v in self.edges.items():
            out[TopologyTree.link_of(e, topo.parent)] += v
        return out


def aggregate_link_throughput(topo: TopologyTree, tm: Mapping[tuple[str, str], float]) -> LinkLoadReport:
    """Sum every traffic-matrix entry onto each directed edge of its path."""
    edges: dict[Edge, float] = {e: 0 for e in topo.edges()}
    node_out = {n: 0 for n in topo.leaves}
    node_in = {n: 0 for n in topo.leaves}
    for (src, dst), rate in tm.items():
        for n in (src, dst):
            if not topo.is_leaf(n):
                raise UnknownNode(n)
        if src == dst:
            raise ValueError(f"traffic matrix entry with src == dst ({src})")
        if rate < 0:
            raise ValueError(f"negative traffic {src}->{dst}")
        for e in topo.path(src, dst):
            edges[e] += rate
        node_out[src] += rate
        node_in[dst] += rate
    return LinkLoadReport(edges, node_out, node_in)


# -- underperformers ----------------------------------------------------------------


def detect_underperformers(store: MetricsStore, window: int = 3, threshold: float = 0.5) -> set[str]:
    """Nodes whose throughput stayed below ``threshold`` x the round median.

    Rounds are aligned from the newest sample backwards; a node is flagged only
    if it is below the cutoff in every one of the last ``window`` rounds.
    A lone node is never flagged.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    snap = store.snapshot()
    short = sorted(n for n, h in snap.items() if len(h) < window)
    if short:
        raise InsufficientSamples(f"fewer than {window} samples for: {', '.join(short)}")
    if len(snap) < 2:
        return set()
    flagged = set(snap)
    for r in range(1, window + 1):
        values = {n: h[-r].throughput for n, h in snap.items()}
        cutoff = threshold * statistics.median(values.values())
        flagged = {n for n in flagged if values[n] < cutoff}
        if not flagged:
            break
    return flagged


# -- source selection -----------------------------------------------------------------


def select_source(topo: TopologyTree, replicas: Iterable[str], requester: str, report: LinkLoadReport,
                  caps: Mapping[Edge, float], demand: float = 0) -> str:
    """Replica minimizing the bottleneck utilization of its path to ``requester``.

    Utilization of an edge is ``(load + demand) / capacity``; edges without a
    capacity never bind.  Ties go to fewer hops, then the smaller node id.
    """
    replicas = sorted(set(replicas))
    if not replicas:
        raise NoReplica(f"no replica available for {requester}")
    topo.check(requester)

    def score(r: str):
        path = topo.path(r, requester)
        worst = Fraction(0)
        for e in path:
            cap = caps.get(e)
            if not cap:
                continue
            u = (Fraction(report.load(e)) + Fraction(demand)) / Fraction(cap)
            if u > worst:
                worst = u
        return (worst, len(path), r)

    return min(replicas, key=score)


# -- status report ---------------------------------------------------------------


@dataclass(frozen=True)
class NodeCapacity:
    """Per-node capacities used to turn raw samples into utilizations."""

    mem_bytes: float = 12 * 2**30
    nic_bytes_per_s: float = 125e6
    disk_bytes_per_s: float = 100e6


REPORT_COLUMNS = ["kind", "id", "at", "cpu_pct", "mem_bytes", "disk_io_bytes_per_s",
                  "net_in_bytes_per_s", "net_out_bytes_per_s", "load_bytes_per_s", "state"]
BUSY_FRACTION = 0.8


def _node_state(s: MetricsSample | None, cap: NodeCapacity) -> str:
    if s is None:
        return "nodata"
    utils = (
        s.cpu_pct / 100.0,
        s.mem_bytes / cap.mem_bytes,
        s.disk_io_bytes_per_s / cap.disk_bytes_per_s,
        s.net_in_bytes_per_s / cap.nic_bytes_per_s,
        s.net_out_bytes_per_s / cap.nic_bytes_per_s,
    )
    return "busy" if max(utils) > BUSY_FRACTION else "idle"


def status_rows(store: MetricsStore, topo: TopologyTree, report: LinkLoadReport | None = None,
                caps: Mapping[Edge, float] | None = None,
                capacity: NodeCapacity = NodeCapacity()) -> list[list[str]]:
    rows = []
    for n in topo.leaves:
        s = store.latest(n) if n in store.nodes else None
        if s is None:
            rows.append(["node", n, "", "", "", "", "", "", "", "nodata"])
            continue
        rows.append(["node", n, f"{s.at:g}", f"{s.cpu_pct:g}", f"{s.mem_bytes:g}",
                     f"{s.disk_io_bytes_per_s:g}", f"{s.net_in_bytes_per_s:g}",
                     f"{s.net_out_bytes_per_s:g}", "", _node_state(s, capacity)])
    caps = caps or {}
    for e in topo.edges():
        load = report.load(e) if report is not None else 0
        cap = caps.get(e)
        state = "busy" if cap and load / cap > BUSY_FRACTION else "idle"
        rows.append(["edge", f"{e[0]}>{e[1]}", "", "", "", "", "", "", f"{load:g}", state])
    return rows


def status_report(store: MetricsStore, topo: TopologyTree, report: LinkLoadReport | None = None,
                  caps: Mapping[Edge, float] | None = None, fmt: str = "csv",
                  capacity: NodeCapacity = NodeCapacity()) -> str:
    """One row per node (latest sample, busy/idle) and one per directed edge."""
    rows = status_rows(store, topo, report, caps, capacity)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    table = [REPORT_COLUMNS] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(REPORT_COLUMNS))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in table)
