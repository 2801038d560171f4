"""MalStone computed by workers that talk GMP/RPC inside a :class:`SimNet`.

The run is a small MapReduce driven by a coordinator actor:

``fetch``
    every worker pulls the partitions assigned to it from a replica holder
    (or reads them locally) and parses the records;
``compromise``
    flagged ``(entity, t)`` pairs are shuffled to the entity's owner, which
    keeps the per-entity minimum (a sharded compromise index);
``contrib``
    every worker reduces its records to distinct ``(site, entity)`` first
    visits, asks the entity owners for compromise times in one batch per
    owner, and ships ``(site, entity, first_t, hit)`` rows to the site owner;
``reduce``
    site owners merge the rows and return per-window increments, which the
    coordinator turns into exact counts.

A row is a hit when the worker-local first visit precedes the compromise.
The global first visit is the minimum of the local ones, so the global hit
flag is the OR of the local flags and the increment lands in the window of
the global first visit.

Virtual time is spent on the network and, when ``compute_rate`` is set, on
one pass over the local records per map phase and one per reduce.
"""

from __future__ import annotations

import csv
import io
import random
import struct
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import Future
from dataclasses import dataclass, field

import numpy as np

from .actors import gather, resolved, spawn
from .gmp import GmpConfig, PeerUnreachable
from .malgen import DEFAULT_PERIOD_START, Records, read_records
from .malstone import DEFAULT_WINDOW, RatioTable, cumulate
from .monitor import (LinkLoadReport, MetricsSample, MetricsStore, format_sample, ingest_handler,
                      select_source)
from .netsim import Scenario, SimNet
from .node import SimGmpNode
from .rpc import RpcError, RpcNode
from .topology import Edge

__all__ = [
    "BenchConfig", "DistributedRun", "ExecutorError", "PartitionMissing", "WorkerUnreachable",
    "owner_of", "spread_workers", "run_distributed", "timing_report", "simbench", "simbench_report", "penalty",
    "link_bytes_from_transcript", "PHASES", "SIMBENCH_COLUMNS", "TIMING_COLUMNS",
]

PHASES = ("fetch", "compromise", "contrib", "reduce")
HASH_MULTIPLIER = 0x9E3779B97F4A7C15
_NO_COMP = np.iinfo(np.int64).min
_COUNT = struct.Struct("!I")


class ExecutorError(RuntimeError):
    pass


class WorkerUnreachable(ExecutorError):
    pass


class PartitionMissing(ExecutorError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    mode: str = "A"
    window_width: int = DEFAULT_WINDOW
    window_origin: int = DEFAULT_PERIOD_START
    source_policy: str = "balanced"
    rpc_timeout: float = 600.0
    seed: int = 0
    compute_rate: float = 0.0  # records/s per worker; 0 makes computation free

    def __post_init__(self):
        if self.mode.upper() not in ("A", "B"):
            raise ValueError(f"mode must be A or B, got {self.mode!r}")
        if self.window_width <= 0:
            raise ValueError("window_width must be > 0")
        if self.source_policy not in ("naive", "balanced"):
            raise ValueError(f"source_policy must be naive or balanced, got {self.source_policy!r}")
        if self.compute_rate < 0:
            raise ValueError("compute_rate must be >= 0")


def owner_of(keys: np.ndarray, n: int) -> np.ndarray:
    """Multiply-shift hash of uint64 keys onto ``n`` owners."""
    with np.errstate(over="ignore"):
        h = (keys.astype(np.uint64) * np.uint64(HASH_MULTIPLIER)) >> np.uint64(32)
    return (h % np.uint64(n)).astype(np.int64)


# -- array framing -----------------------------------------------------------------


def _pack(*cols: np.ndarray) -> bytes:
    n = len(cols[0]) if cols else 0
    parts = [_COUNT.pack(n)]
    for c in cols:
        parts.append(c.astype(c.dtype.newbyteorder(">"), copy=False).tobytes())
    return b"".join(parts)


def _unpack(b: bytes, *dtypes: str) -> list[np.ndarray]:
    (n,) = _COUNT.unpack_from(b)
    off = _COUNT.size
    out = []
    for dt in dtypes:
        d = np.dtype(dt).newbyteorder(">")
        out.append(np.frombuffer(b, dtype=d, count=n, offset=off).astype(dt))
        off += n * d.itemsize
    if off != len(b):
        raise ValueError(f"frame length {len(b)} does not match {n} rows")
    return out


def _first_rows(keys: tuple[np.ndarray, ...], t: np.ndarray):
    """Per distinct key tuple, the minimum ``t``.  Returns (keys..., t)."""
    if len(t) == 0:
        return (*keys, t)
    order = np.lexsort((t, *reversed(keys)))
    ks = [k[order] for k in keys]
    change = np.zeros(len(order), dtype=bool)
    change[0] = True
    for k in ks:
        change[1:] |= k[1:] != k[:-1]
    return (*(k[change] for k in ks), t[order][change])


# -- worker ----------------------------------------------------------------------


class _Worker:
    """Map and reduce state for one worker; every method is an RPC handler."""

    def __init__(self, rpc: RpcNode, peers: Sequence[str], holdings: Mapping[int, bytes],
                 timeout: float, compute_rate: float = 0.0):
        self.rpc = rpc
        self.peers = list(peers)
        self.holdings = dict(holdings)
        self.timeout = timeout
        self.compute_rate = compute_rate
        self.records = Records.empty()
        self.bytes_fetched = 0
        self._comp_parts: list[tuple[np.ndarray, np.ndarray]] = []
        self._comp: tuple[np.ndarray, np.ndarray] | None = None
        self._contrib: list[tuple[np.ndarray, ...]] = []
        self._fetch = _holder_fetch(rpc.address, self.holdings)
        for name in ("store.fetch", "mr.load", "mr.map_comp", "mr.comp_put", "mr.comp_get",
                     "mr.map_contrib", "mr.contrib_put", "mr.reduce"):
            rpc.register_handler(name, getattr(self, "_" + name.split(".")[1]))

    def _call(self, peer: str, method: str, body: bytes) -> Future:
        return self.rpc.call(peer, method, body, self.timeout)

    def _load(self, body: bytes) -> Future:
        pids, srcs = _unpack_plan(body)
        return spawn(self._load_actor(pids, srcs))

    def _load_actor(self, pids: list[int], srcs: list[str]):
        futs = []
        for pid, src in zip(pids, srcs):
            if src == self.rpc.address:
                futs.append(resolved(self._fetch(_COUNT.pack(pid))))
            else:
                futs.append(self._call(src, "store.fetch", _COUNT.pack(pid)))
        datas = yield futs
        parts = []
        for pid, src, data in zip(pids, srcs, datas):
            if src != self.rpc.address:
                self.bytes_fetched += len(data)
            parts.append(read_records(data, context=f"partition {pid}"))
        self.records = Records.concat([self.records, *parts])
        yield self._after(sum(len(p) for p in parts), b"")
        return _COUNT.pack(len(self.records))

    def _scatter(self, method: str, owners: np.ndarray, cols: Sequence[np.ndarray]) -> list[Future]:
        futs = []
        for w, peer in enumerate(self.peers):
            sel = owners == w
            futs.append(self._call(peer, method, _pack(*(c[sel] for c in cols))))
        return futs

    def _map_comp(self, body: bytes) -> Future:
        r = self.records
        hit = r.flag == 1
        ent, t = r.entity_id[hit], r.timestamp[hit]
        return spawn(self._scatter_after(len(r), "mr.comp_put", owner_of(ent, len(self.peers)), (ent, t)))

    def _scatter_after(self, work: int, method: str, owners: np.ndarray, cols):
        yield self._after(work, b"")
        yield self._scatter(method, owners, cols)
        return b""

    def _comp_put(self, body: bytes) -> bytes:
        self._comp_parts.append(tuple(_unpack(body, "u8", "i8")))
        self._comp = None
        return b""

    def _comp_index(self) -> tuple[np.ndarray, np.ndarray]:
        if self._comp is None:
            ent = np.concatenate([p[0] for p in self._comp_parts] or [np.zeros(0, np.uint64)])
            t = np.concatenate([p[1] for p in self._comp_parts] or [np.zeros(0, np.int64)])
            self._comp = _first_rows((ent,), t)
        return self._comp

    def _comp_get(self, body: bytes) -> bytes:
        (query,) = _unpack(body, "u8")
        ent, t = self._comp_index()
        out = np.full(len(query), _NO_COMP, dtype=np.int64)
        if len(ent):
            pos = np.minimum(np.searchsorted(ent, query), len(ent) - 1)
            found = ent[pos] == query
            out[found] = t[pos[found]]
        return _pack(out)

    def _map_contrib(self, body: bytes) -> Future:
        return spawn(self._contrib_actor())

    def _contrib_actor(self):
        r = self.records
        n = len(self.peers)
        yield self._after(len(r), b"")
        site, ent, first_t = _first_rows((r.site_id, r.entity_id), r.timestamp)
        uniq, inverse = np.unique(ent, return_inverse=True)
        owners = owner_of(uniq, n)
        replies = yield self._scatter("mr.comp_get", owners, (uniq,))
        comp = np.empty(len(uniq), dtype=np.int64)
        for w, rep in enumerate(replies):
            (vals,) = _unpack(rep, "i8")
            comp[owners == w] = vals
        c = comp[inverse]
        hit = ((c != _NO_COMP) & (first_t <= c)).astype(np.uint8)
        yield self._scatter("mr.contrib_put", owner_of(site, n), (site, ent, first_t, hit))
        lo = int(r.timestamp.min()) if len(r) else 0
        hi = int(r.timestamp.max()) if len(r) else 0
        return struct.pack("!Bqq", 1 if len(r) else 0, lo, hi)

    def _contrib_put(self, body: bytes) -> bytes:
        self._contrib.append(tuple(_unpack(body, "u8", "u8", "i8", "u1")))
        return b""

    def _reduce(self, body: bytes) -> Future:
        width, origin = struct.unpack("!qq", body)
        empty = np.zeros(0, np.uint64), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
        if not self._contrib:
            return self._after(0, _pack(*empty))
        site, ent, t, hit = (np.concatenate(cs) for cs in zip(*self._contrib))
        order = np.lexsort((ent, site))
        site, ent, t, hit = site[order], ent[order], t[order], hit[order]
        change = np.ones(len(site), dtype=bool)
        change[1:] = (site[1:] != site[:-1]) | (ent[1:] != ent[:-1])
        starts = np.flatnonzero(change)
        anyhit = np.maximum.reduceat(hit, starts).astype(np.int64)
        site, t = site[starts], np.minimum.reduceat(t, starts)
        k = np.zeros(len(t), np.int64) if width == 0 else (t - origin) // width
        # per (site, window): new distinct visitors and new hits
        order = np.lexsort((k, site))
        site, k, anyhit = site[order], k[order], anyhit[order]
        change = np.ones(len(site), dtype=bool)
        change[1:] = (site[1:] != site[:-1]) | (k[1:] != k[:-1])
        starts = np.flatnonzero(change)
        den = np.diff(np.append(starts, len(site))).astype(np.int64)
        num = np.add.reduceat(anyhit, starts)
        return self._after(len(order), _pack(site[starts], k[starts], den, num))

    def _after(self, work: int, reply: bytes) -> Future:
        """Reply once ``work`` records' worth of compute time has passed."""
        f: Future = Future()
        if not self.compute_rate or not work:
            f.set_result(reply)
        else:
            self.rpc.node.call_later(work / self.compute_rate, lambda: f.set_result(reply))
        return f


def _pack_plan(pids: Sequence[int], srcs: Sequence[str]) -> bytes:
    return "\n".join(f"{p} {s}" for p, s in zip(pids, srcs)).encode()


def _unpack_plan(body: bytes) -> tuple[list[int], list[str]]:
    pids, srcs = [], []
    for line in body.decode().splitlines():
        p, s = line.split(" ", 1)
        pids.append(int(p))
        srcs.append(s)
    return pids, srcs


# -- planning ------------------------------------------------------------------


def _assign(n_parts: int, workers: Sequence[str], placement: Mapping[int, Sequence[str]],
            assignment: Mapping[int, str] | None, flagged: set[str]) -> dict[int, str]:
    active = [w for w in workers if w not in flagged]
    if not active:
        raise ExecutorError("every worker is flagged; nothing left to run on")
    load = Counter({w: 0 for w in active})
    out = {}
    for pid in range(n_parts):
        want = assignment.get(pid) if assignment else None
        if want is None or want in flagged:
            local = [w for w in placement[pid] if w in load]
            pool = local or active
            want = min(pool, key=lambda w: (load[w], active.index(w)))
        elif want not in workers:
            raise ExecutorError(f"partition {pid} assigned to unknown worker {want!r}")
        out[pid] = want
        load[want] += 1
    return out


def _choose_sources(net: SimNet, sizes: Sequence[int], placement: Mapping[int, Sequence[str]],
                    assigned: Mapping[int, str], flagged: set[str], policy: str,
                    caps: Mapping[Edge, float], rng: random.Random) -> dict[int, str]:
    topo = net.topology
    report = LinkLoadReport({e: 0 for e in topo.edges()}, {}, {})
    out = {}
    for pid in sorted(assigned):
        dst = assigned[pid]
        holders = list(placement[pid])
        if dst in holders:
            out[pid] = dst
            continue
        healthy = [h for h in holders if h not in flagged] or holders
        if policy == "naive":
            src = rng.choice(sorted(healthy))
        else:
            src = select_source(topo, healthy, dst, report, caps, demand=sizes[pid])
        out[pid] = src
        for e in topo.path(src, dst):
            report.edges[e] += sizes[pid]
    return out


# -- coordinator -----------------------------------------------------------------


@dataclass
class DistributedRun:
    table: RatioTable
    phases: list[tuple[str, float, float]]
    phase_link_bytes: dict[str, Counter]
    worker_records: dict[str, int]
    sources: dict[int, str]
    assignment: dict[int, str]
    flagged: frozenset[str]
    bytes_fetched: dict[str, int] = field(default_factory=dict)

    @property
    def total_time(self) -> float:
        return self.phases[-1][2] - self.phases[0][1] if self.phases else 0.0

    def phase_time(self, name: str) -> float:
        for n, a, b in self.phases:
            if n == name:
                return b - a
        raise KeyError(name)

    @property
    def link_bytes(self) -> Counter:
        total: Counter = Counter()
        for c in self.phase_link_bytes.values():
            total.update(c)
        return total


def run_distributed(cfg: BenchConfig, partitions: Sequence[bytes], net: SimNet, workers: Sequence[str], *,
                    placement: Mapping[int, Sequence[str]] | None = None,
                    assignment: Mapping[int, str] | None = None,
                    coordinator: str | None = None,
                    capacities: Mapping[Edge, float] | None = None,
                    flagged: Iterable[str] = (),
                    store: MetricsStore | None = None,
                    gmp_config: GmpConfig | None = None) -> DistributedRun:
    """Run MalStone over ``workers`` inside ``net`` and return the exact table.

    ``placement`` maps partition index to the nodes holding a replica
    (default: partition ``i`` lives on worker ``i mod n``).  Flagged workers
    get no partitions and are avoided as sources when another replica exists.
    With a ``store``, every worker reports one metrics sample to the
    coordinator over ``monitor.ingest`` after the fetch phase.
    """
    workers = list(workers)
    if not workers:
        raise ExecutorError("need at least one worker")
    if len(set(workers)) != len(workers):
        raise ExecutorError("duplicate worker names")
    flagged = set(flagged)
    if placement is None:
        placement = {i: (workers[i % len(workers)],) for i in range(len(partitions))}
    for pid in range(len(partitions)):
        if not placement.get(pid):
            raise PartitionMissing(f"partition {pid} has no replica")
    coordinator = coordinator or workers[0]
    caps = capacities if capacities is not None else {}

    holders: dict[str, dict[int, bytes]] = {}
    for pid, nodes in placement.items():
        for n in nodes:
            holders.setdefault(n, {})[pid] = partitions[pid]
    hosts = list(dict.fromkeys([*workers, *holders, coordinator]))
    rpcs = {h: RpcNode(SimGmpNode(net, h, gmp_config)) for h in hosts}
    state = {w: _Worker(rpcs[w], workers, holders.get(w, {}), cfg.rpc_timeout, cfg.compute_rate)
             for w in workers}
    for h in hosts:
        if h not in state:
            rpcs[h].register_handler("store.fetch", _holder_fetch(h, holders.get(h, {})))
    if store is not None:
        rpcs[coordinator].register_handler("monitor.ingest", ingest_handler(store))

    sizes = [len(p) for p in partitions]
    assigned = _assign(len(partitions), workers, placement, assignment, flagged)
    sources = _choose_sources(net, sizes, placement, assigned, flagged, cfg.source_policy, caps,
                              random.Random(f"sources:{cfg.seed}"))
    phases: list[tuple[str, float, float]] = []
    phase_bytes: dict[str, Counter] = {}
    ctl = rpcs[coordinator]

    def call_all(method: str, bodies: Mapping[str, bytes]) -> Future:
        futs = [ctl.call(w, method, bodies.get(w, b""), cfg.rpc_timeout) for w in workers]
        return gather(futs)

    def phase(name: str, method: str, bodies: Mapping[str, bytes] = {}):
        t0, b0 = net.now, Counter(net.link_bytes)
        try:
            res = yield call_all(method, bodies)
        except (PeerUnreachable, RpcError) as exc:
            raise WorkerUnreachable(f"{name} phase failed: {exc}") from exc
        phases.append((name, t0, net.now))
        delta = Counter(net.link_bytes)
        delta.subtract(b0)
        phase_bytes[name] = Counter({e: v for e, v in delta.items() if v})
        return res

    def coordinator_actor():
        plans = {w: _pack_plan([p for p in sorted(assigned) if assigned[p] == w],
                               [sources[p] for p in sorted(assigned) if assigned[p] == w]) for w in workers}
        counts = yield from phase("fetch", "mr.load", plans)
        if store is not None:
            t = net.now
            futs = [rpcs[w].call(coordinator, "monitor.ingest",
                                 format_sample(_sample(w, t, state[w], phases[-1])).encode(), cfg.rpc_timeout)
                    for w in workers]
            yield futs
        yield from phase("compromise", "mr.map_comp")
        spans = yield from phase("contrib", "mr.map_contrib")
        width = cfg.window_width if cfg.mode.upper() == "B" else 0
        parts = yield from phase("reduce", "mr.reduce",
                                 {w: struct.pack("!qq", width, cfg.window_origin) for w in workers})
        return counts, spans, parts

    fut = spawn(coordinator_actor())
    try:
        counts, spans, parts = net.run_until_complete(fut)
    except TimeoutError as exc:
        raise WorkerUnreachable(f"run stalled at t={net.now:.6f}") from exc
    for r in rpcs.values():
        r.node.stop()
    table = _merge(cfg, spans, parts)
    return DistributedRun(
        table=table, phases=phases, phase_link_bytes=phase_bytes,
        worker_records={w: _COUNT.unpack(c)[0] for w, c in zip(workers, counts)},
        sources=sources, assignment=assigned, flagged=frozenset(flagged),
        bytes_fetched={w: state[w].bytes_fetched for w in workers},
    )


def _holder_fetch(name: str, held: Mapping[int, bytes]):
    def fetch(body: bytes) -> bytes:
        (pid,) = _COUNT.unpack(body)
        if pid not in held:
            raise PartitionMissing(f"partition {pid} not held by {name}")
        return held[pid]
    return fetch


def _sample(node: str, at: float, w: _Worker, ph: tuple[str, float, float]) -> MetricsSample:
    dur = max(ph[2] - ph[1], 1e-9)
    return MetricsSample(node, at, 0.0, float(len(w.records) * 100), 0.0, w.bytes_fetched / dur, 0.0)


def _merge(cfg: BenchConfig, spans: Sequence[bytes], parts: Sequence[bytes]) -> RatioTable:
    den_inc: dict[int, dict[int, int]] = {}
    num_inc: dict[int, dict[int, int]] = {}
    for p in parts:
        site, k, den, num = _unpack(p, "u8", "i8", "i8", "i8")
        for s, kk, d, n in zip(site.tolist(), k.tolist(), den.tolist(), num.tolist()):
            den_inc.setdefault(s, {})[kk] = d
            if n:
                num_inc.setdefault(s, {})[kk] = n
    if cfg.mode.upper() == "A":
        return RatioTable("A", {s: (sum(num_inc.get(s, {}).values()), sum(d.values()))
                                for s, d in den_inc.items()})
    his = [struct.unpack("!Bqq", s) for s in spans]
    his = [hi for nonempty, _, hi in his if nonempty]
    if not his:
        return RatioTable("B")
    last = (max(his) - cfg.window_origin) // cfg.window_width
    return RatioTable("B", cumulate(den_inc, num_inc, last))


# -- reports -------------------------------------------------------------------


TIMING_COLUMNS = ["section", "key", "value"]


def timing_report(run: DistributedRun, baseline: DistributedRun | None = None,
                  comments: Iterable[str] = ()) -> str:
    """Long-format timing CSV: phases, bytes per directed link, records per worker.

    The ``penalty`` row is ``(T - T_baseline) / T_baseline``; without a
    baseline the run is its own baseline and the penalty is 0.
    """
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for name, a, b in run.phases:
        w.writerow(["phase", name, f"{b - a:.9f}"])
    w.writerow(["total", "time_s", f"{run.total_time:.9f}"])
    w.writerow(["total", "penalty", f"{penalty(run, baseline):.6f}"])
    for (u, v), n in sorted(run.link_bytes.items()):
        w.writerow(["link", f"{u}>{v}", n])
    for node, n in sorted(run.worker_records.items()):
        w.writerow(["worker", node, n])
    return buf.getvalue()


def penalty(run: DistributedRun, baseline: DistributedRun | None) -> float:
    if baseline is None:
        return 0.0
    return (run.total_time - baseline.total_time) / baseline.total_time


# -- simbench -------------------------------------------------------------------


SIMBENCH_COLUMNS = ["run", "scenario", "workers", "records", "fetch_s", "compromise_s", "contrib_s",
                    "reduce_s", "total_s", "wan_bytes", "penalty", "penalty_pct"]


@dataclass
class SimbenchResult:
    runs: dict[str, DistributedRun]
    scenarios: dict[str, Scenario]
    records: int
    workers: int
    transcript_hashes: dict[str, str]

    def penalty(self, name: str) -> float:
        return penalty(self.runs[name], self.runs["local"])


def spread_workers(sc: Scenario, n: int) -> list[str]:
    """``n`` scenario nodes taken round-robin across racks."""
    racks = list(sc.rack_nodes().values())
    if not 1 <= n <= sum(map(len, racks)):
        raise ValueError(f"cannot place {n} workers on {sum(map(len, racks))} nodes")
    order = [rack[i] for i in range(max(map(len, racks))) for rack in racks if i < len(rack)]
    return order[:n]


def simbench(partitions: Sequence[bytes], local: Scenario, distributed: Scenario, *,
             per_rack: int = 7, replicas: int = 3, mode: str = "A", window_width: int = DEFAULT_WINDOW,
             window_origin: int = DEFAULT_PERIOD_START, compute_rate: float = 0.0,
             seed: int = 0) -> SimbenchResult:
    """Same data and logical placement on one rack versus spread over racks.

    Logical worker ``j`` is the ``j``-th node of ``local`` and node
    ``j // racks`` of rack ``j mod racks`` in ``distributed``.  Partition ``p``
    is processed by worker ``p mod n`` and stored on ``replicas`` other
    workers drawn from a seeded RNG, so every partition must be fetched.
    """
    n = per_rack * distributed.racks
    if local.racks * local.nodes_per_rack < n:
        raise ValueError(f"local scenario has fewer than {n} nodes")
    if distributed.nodes_per_rack < per_rack:
        raise ValueError(f"distributed scenario has fewer than {per_rack} nodes per rack")
    if replicas >= n:
        raise ValueError("replicas must be fewer than workers")
    rng = random.Random(f"placement:{seed}")
    logical_place = {}
    for p in range(len(partitions)):
        home = p % n
        others = [j for j in range(n) if j != home]
        logical_place[p] = (home, sorted(rng.sample(others, replicas)))

    layouts = {
        "local": (local, local.nodes()[:n], "balanced"),
        "distributed-naive": (distributed, spread_workers(distributed, n), "naive"),
        "distributed-balanced": (distributed, spread_workers(distributed, n), "balanced"),
    }
    runs, hashes = {}, {}
    for name, (sc, ws, policy) in layouts.items():
        net = sc.build(seed=seed, keep_transcript=False)
        cfg = BenchConfig(mode=mode, window_width=window_width, window_origin=window_origin,
                          source_policy=policy, seed=seed, compute_rate=compute_rate)
        placement = {p: tuple(ws[j] for j in reps) for p, (_, reps) in logical_place.items()}
        assignment = {p: ws[home] for p, (home, _) in logical_place.items()}
        runs[name] = run_distributed(cfg, partitions, net, ws, placement=placement, assignment=assignment,
                                     capacities=sc.capacities())
        hashes[name] = net.transcript_hash()
    total = sum(len(p) for p in partitions) // 100
    return SimbenchResult(runs, {k: v[0] for k, v in layouts.items()}, total, n, hashes)


def simbench_report(res: SimbenchResult, comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIMBENCH_COLUMNS)
    for name, run in res.runs.items():
        sc = res.scenarios[name]
        topo = sc.topology()
        wan = sum(v for (a, b), v in run.link_bytes.items() if topo.root in (a, b))
        p = res.penalty(name) if name != "local" else 0.0
        w.writerow([name, sc.name, res.workers, res.records,
                    *(f"{run.phase_time(ph):.6f}" for ph in PHASES),
                    f"{run.total_time:.6f}", wan, f"{p:.6f}", f"{100 * p:.2f}"])
    return buf.getvalue()


def link_bytes_from_transcript(net_topology, transcript: Iterable[str]) -> Counter:
    """Recompute per-edge byte counts from transcript lines alone."""
    out: Counter = Counter()
    for line in transcript:
        parts = line.split()
        kind = parts[1]
        if kind == "send":
            _, _, src, dst, size = parts
            for e in net_topology.path(src, dst):
                out[e] += int(size)
        elif kind == "drop":
            _, _, src, dst, size, edge = parts
            u, v = edge.split(">")
            # the send line already charged the full path; refund edges past the drop
            path = net_topology.path(src, dst)
            cut = path.index((u, v))
            for e in path[cut + 1:]:
                out[e] -= int(size)
    return +out

