"""Deterministic discrete-event simulator of a tree-shaped wide-area network.

Events are ordered by ``(virtual time, insertion counter)`` and all randomness
comes from one seeded :class:`random.Random`, so a run is a pure function of
(scenario, seed, workload).  Every send, drop, duplicate, arrival and timer is
written to a transcript whose running hash is the determinism fingerprint.

Scenario files are ``key = value`` lines (``#`` starts a comment)::

    racks = 4
    nodes_per_rack = 8
    intra_latency_ms = 0.1       # fixed, or a uniform range "15-35"
    inter_latency_ms = 10        # one value, or one per rack "10,2,2,30"
    intra_loss = 0
    inter_loss = 0
    intra_bandwidth = 125000000  # bytes/s, 0 = unlimited
    inter_bandwidth = 31250000
    duplicate_prob = 0
    reorder_jitter_ms = 0
    seed = 1
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from collections import Counter
from collections.abc import Callable, Iterable
from concurrent.futures import Future
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .topology import Edge, TopologyTree, UnknownNode

__all__ = [
    "LinkSpec", "SimEvent", "SimNet", "Scenario", "ScenarioError", "UnknownNode",
    "load_scenario", "parse_scenario", "builtin_scenario",
]


@dataclass(frozen=True)
class LinkSpec:
    """Impairments of one full-duplex link; times in seconds, bandwidth in bytes/s."""

    latency: float | tuple[float, float] = 0.0
    loss_prob: float = 0.0
    bandwidth: float = 0.0
    duplicate_prob: float = 0.0
    reorder_jitter: float = 0.0

    def __post_init__(self):
        lo, hi = self.latency if isinstance(self.latency, tuple) else (self.latency, self.latency)
        if lo < 0 or hi < lo:
            raise ValueError(f"bad latency {self.latency!r}")
        for name in ("loss_prob", "duplicate_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.bandwidth < 0 or self.reorder_jitter < 0:
            raise ValueError("bandwidth and reorder_jitter must be >= 0")


@dataclass(frozen=True, slots=True)
class SimEvent:
    at: float
    kind: str  # "arrive" | "timer"
    src: object = None
    dst: object = None
    size: int = 0
    label: str = ""


class SimNet:
    def __init__(self, topology: TopologyTree, links: dict[str, LinkSpec] | LinkSpec | None = None,
                 seed: int = 0, keep_transcript: bool = True):
        self.topology = topology
        default = links if isinstance(links, LinkSpec) else LinkSpec()
        per_link = links if isinstance(links, dict) else {}
        unknown = set(per_link) - set(topology.links())
        if unknown:
            raise UnknownNode(f"link specs for unknown links: {sorted(unknown)}")
        self.links: dict[str, LinkSpec] = {c: per_link.get(c, default) for c in topology.links()}
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self._queue: list = []
        self._counter = itertools.count()
        self._hosts: dict[object, Callable[[object, bytes], None]] = {}
        self._busy: dict[Edge, float] = {}
        self._routes: dict[tuple, tuple] = {}
        self.link_bytes: Counter[Edge] = Counter()
        self.stats: Counter[str] = Counter()
        self.keep_transcript = keep_transcript
        self.transcript: list[str] = []
        self._hash = hashlib.sha256()

    # -- plumbing --------------------------------------------------------------

    def attach(self, node: str, on_datagram: Callable[[object, bytes], None]) -> None:
        self.topology.check(node)
        self._hosts[node] = on_datagram

    def detach(self, node: str) -> None:
        self._hosts.pop(node, None)

    def _log(self, line: str) -> None:
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.keep_transcript:
            self.transcript.append(line)

    def transcript_hash(self) -> str:
        return self._hash.hexdigest()

    def derive_rng(self, *parts: object) -> random.Random:
        """Independent, seed-derived RNG (used for session ids)."""
        return random.Random(":".join(map(str, (self.seed, *parts))))

    def _route(self, src: str, dst: str) -> tuple:
        key = (src, dst)
        r = self._routes.get(key)
        if r is None:
            parent = self.topology.parent
            path = self.topology.path(src, dst)
            r = tuple((e, self.links[TopologyTree.link_of(e, parent)]) for e in path)
            self._routes[key] = r
        return r

    # -- operations ------------------------------------------------------------

    def submit(self, src: str, dst: str, data: bytes) -> None:
        """Send one datagram ``src -> dst`` along the tree path."""
        if src not in self.topology or dst not in self.topology:
            raise UnknownNode(src if src not in self.topology else dst)
        size = len(data)
        now = self.now
        rng = self.rng
        t = now
        busy = self._busy
        dup_extra: list[float] = []
        self.stats["sent"] += 1
        self._log(f"{now:.9f} send {src} {dst} {size}")
        for edge, ls in self._route(src, dst):
            if ls.bandwidth:
                start = busy.get(edge, 0.0)
                if start < t:
                    start = t
                t = start + size / ls.bandwidth
                busy[edge] = t
            self.link_bytes[edge] += size
            if ls.loss_prob and rng.random() < ls.loss_prob:
                self.stats["dropped"] += 1
                self._log(f"{now:.9f} drop {src} {dst} {size} {edge[0]}>{edge[1]}")
                return
            lat = ls.latency
            if isinstance(lat, tuple):
                lat = rng.uniform(lat[0], lat[1])
            if ls.reorder_jitter:
                lat += rng.uniform(0.0, ls.reorder_jitter)
            t += lat
            if ls.duplicate_prob and rng.random() < ls.duplicate_prob:
                dup_extra.append(rng.uniform(0.0, max(ls.reorder_jitter, 1e-6)))
        self._push(t, ("arrive", src, dst, data))
        for extra in dup_extra:
            self.stats["duplicated"] += 1
            self._log(f"{now:.9f} dup {src} {dst} {size}")
            self._push(t + extra, ("arrive", src, dst, data))

    def call_at(self, at: float, fn: Callable[[], None], label: str = "") -> None:
        """Schedule a timer callback; times in the past fire at the current clock."""
        self._push(max(at, self.now), ("timer", fn, label))

    def call_later(self, delay: float, fn: Callable[[], None], label: str = "") -> None:
        self.call_at(self.now + delay, fn, label)

    def _push(self, at: float, item: tuple) -> None:
        heapq.heappush(self._queue, (at, next(self._counter), item))

    def _fire(self, at: float, item: tuple) -> SimEvent:
        self.now = at
        if item[0] == "arrive":
            _, src, dst, data = item
            self.stats["arrived"] += 1
            self._log(f"{at:.9f} arrive {src} {dst} {len(data)}")
            host = self._hosts.get(dst)
            if host is not None:
                host(src, data)
            return SimEvent(at, "arrive", src, dst, len(data))
        _, fn, label = item
        self._log(f"{at:.9f} timer {label or '-'} - 0")
        fn()
        return SimEvent(at, "timer", label=label)

    def pending_events(self) -> int:
        return len(self._queue)

    def next_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def advance(self, until: float) -> list[SimEvent]:
        """Fire every event with ``at <= until``; the clock ends at ``until``."""
        if until < self.now:
            raise ValueError(f"cannot move clock backwards ({until} < {self.now})")
        fired = []
        q = self._queue
        while q and q[0][0] <= until:
            at, _, item = heapq.heappop(q)
            fired.append(self._fire(at, item))
        self.now = until
        return fired

    def step(self) -> SimEvent | None:
        if not self._queue:
            return None
        at, _, item = heapq.heappop(self._queue)
        return self._fire(at, item)

    def run(self, until: Callable[[], bool] | None = None, limit: float = float("inf"),
            max_events: int | None = None) -> int:
        """Fire events until ``until()`` holds, the queue drains or the clock would pass ``limit``."""
        n = 0
        q = self._queue
        while q and q[0][0] <= limit:
            if until is not None and until():
                break
            if max_events is not None and n >= max_events:
                break
            at, _, item = heapq.heappop(q)
            self._fire(at, item)
            n += 1
        return n

    def run_until_complete(self, fut: Future, limit: float = float("inf")):
        self.run(until=fut.done, limit=limit)
        if not fut.done():
            raise TimeoutError(f"future not resolved by t={self.now:.6f}")
        return fut.result()


# -- scenarios -------------------------------------------------------------------


class ScenarioError(ValueError):
    pass


def _fmt_latency(v: float | tuple[float, float]) -> str:
    if isinstance(v, tuple):
        return f"{v[0] * 1e3:g}-{v[1] * 1e3:g}"
    return f"{v * 1e3:g}"


@dataclass(frozen=True)
class Scenario:
    """Racks (one data center each) under a single core switch."""

    name: str = "oct4"
    racks: int = 4
    nodes_per_rack: int = 8
    intra_latency: float | tuple[float, float] = 0.0001
    inter_latency: float | tuple[float, float] = 0.010
    inter_latency_per_rack: tuple | None = None
    intra_loss: float = 0.0
    inter_loss: float = 0.0
    intra_bandwidth: float = 125e6
    inter_bandwidth: float = 31.25e6
    duplicate_prob: float = 0.0
    reorder_jitter: float = 0.0
    seed: int = 1

    def __post_init__(self):
        if self.racks < 1:
            raise ScenarioError("racks: must be >= 1")
        if self.nodes_per_rack < 1:
            raise ScenarioError("nodes_per_rack: must be >= 1")
        per_rack = self._per_rack_latency()
        if len(per_rack) != self.racks:
            raise ScenarioError(f"inter_latency: expected 1 or {self.racks} values, got {len(per_rack)}")
        for name in ("intra_loss", "inter_loss", "duplicate_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ScenarioError(f"{name}: must be in [0, 1]")
        for name in ("intra_bandwidth", "inter_bandwidth", "reorder_jitter"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name}: must be >= 0")
        for name, values in (("intra_latency", [self.intra_latency]), ("inter_latency", per_rack)):
            for v in values:
                try:
                    LinkSpec(latency=v)
                except ValueError as exc:
                    raise ScenarioError(f"{name}: {exc}") from None

    def _per_rack_latency(self) -> list:
        if self.inter_latency_per_rack is not None:
            return list(self.inter_latency_per_rack)
        return [self.inter_latency] * self.racks

    @staticmethod
    def rack_name(r: int) -> str:
        return f"dc{r}"

    def node_name(self, r: int, i: int) -> str:
        width = max(2, len(str(self.nodes_per_rack - 1)))
        return f"dc{r}-n{i:0{width}d}"

    def rack_nodes(self) -> dict[str, list[str]]:
        return {self.rack_name(r): [self.node_name(r, i) for i in range(self.nodes_per_rack)]
                for r in range(self.racks)}

    def nodes(self) -> list[str]:
        return [n for nodes in self.rack_nodes().values() for n in nodes]

    def intra_spec(self) -> LinkSpec:
        return LinkSpec(self.intra_latency, self.intra_loss, self.intra_bandwidth,
                        self.duplicate_prob, self.reorder_jitter)

    def inter_spec(self, rack: int) -> LinkSpec:
        return LinkSpec(self._per_rack_latency()[rack], self.inter_loss, self.inter_bandwidth,
                        self.duplicate_prob, self.reorder_jitter)

    def topology(self) -> TopologyTree:
        return TopologyTree.hierarchical(self.rack_nodes())

    def link_specs(self) -> dict[str, LinkSpec]:
        specs = {}
        for r, (rack, nodes) in enumerate(self.rack_nodes().items()):
            specs[rack] = self.inter_spec(r)
            intra = self.intra_spec()
            for n in nodes:
                specs[n] = intra
        return specs

    def build(self, seed: int | None = None, keep_transcript: bool = True) -> SimNet:
        return SimNet(self.topology(), self.link_specs(), self.seed if seed is None else seed,
                      keep_transcript=keep_transcript)

    def capacities(self) -> dict[Edge, float]:
        """Directed-edge capacities (bytes/s) for bandwidth-limited links."""
        caps = {}
        topo = self.topology()
        specs = self.link_specs()
        for e in topo.edges():
            bw = specs[TopologyTree.link_of(e, topo.parent)].bandwidth
            if bw:
                caps[e] = bw
        return caps

    def with_(self, **changes) -> Scenario:
        return replace(self, **changes)

    def to_config(self) -> str:
        per_rack = self._per_rack_latency()
        inter = (_fmt_latency(per_rack[0]) if len(set(per_rack)) == 1
                 else ",".join(_fmt_latency(v) for v in per_rack))
        lines = [
            f"name = {self.name}",
            f"racks = {self.racks}",
            f"nodes_per_rack = {self.nodes_per_rack}",
            f"intra_latency_ms = {_fmt_latency(self.intra_latency)}",
            f"inter_latency_ms = {inter}",
            f"intra_loss = {self.intra_loss:g}",
            f"inter_loss = {self.inter_loss:g}",
            f"intra_bandwidth = {self.intra_bandwidth:g}",
            f"inter_bandwidth = {self.inter_bandwidth:g}",
            f"duplicate_prob = {self.duplicate_prob:g}",
            f"reorder_jitter_ms = {self.reorder_jitter * 1e3:g}",
            f"seed = {self.seed}",
        ]
        return "\n".join(lines) + "\n"


BUILTIN: dict[str, Scenario] = {
    "oct4": Scenario(),
    "oct4-constrained": Scenario(name="oct4-constrained", inter_bandwidth=12.5e6),
    "local28": Scenario(name="local28", racks=1, nodes_per_rack=28, inter_bandwidth=12.5e6),
}


def builtin_scenario(name: str, /, **overrides) -> Scenario:
    try:
        base = BUILTIN[name]
    except KeyError:
        raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {sorted(BUILTIN)}") from None
    return base.with_(**overrides) if overrides else base


def _parse_latency_ms(text: str) -> float | tuple[float, float]:
    text = text.strip()
    for sep in ("..", "-"):
        if sep in text[1:]:
            lo, hi = text.split(sep, 1)
            return (float(lo) / 1e3, float(hi) / 1e3)
    return float(text) / 1e3


_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "name": ("name", str),
    "racks": ("racks", int),
    "nodes_per_rack": ("nodes_per_rack", int),
    "intra_latency_ms": ("intra_latency", _parse_latency_ms),
    "inter_latency_ms": ("inter_latency", _parse_latency_ms),
    "intra_loss": ("intra_loss", float),
    "inter_loss": ("inter_loss", float),
    "intra_bandwidth": ("intra_bandwidth", float),
    "inter_bandwidth": ("inter_bandwidth", float),
    "duplicate_prob": ("duplicate_prob", float),
    "reorder_jitter_ms": ("reorder_jitter", lambda s: float(s) / 1e3),
    "seed": ("seed", int),
}


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    base = "oct4"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "base":
            base = value
            continue
        if key not in _KEYS:
            raise ScenarioError(f"{source}:{lineno}: unknown field {key!r}")
        attr, conv = _KEYS[key]
        try:
            if key == "inter_latency_ms" and "," in value:
                values["inter_latency_per_rack"] = tuple(_parse_latency_ms(v) for v in value.split(","))
                lines["inter_latency"] = lineno
                continue
            values[attr] = conv(value)
            lines[attr] = lineno
        except ValueError:
            raise ScenarioError(f"{source}:{lineno}: field {key}: cannot parse {value!r}") from None
    try:
        return builtin_scenario(base, **values)
    except ScenarioError as exc:
        field_name = str(exc).split(":", 1)[0]
        where = f"{source}:{lines[field_name]}" if field_name in lines else source
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Built-in scenario name or path to a scenario file."""
    if isinstance(name_or_path, str) and name_or_path in BUILTIN:
        return BUILTIN[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise ScenarioError(f"no built-in scenario or file named {str(name_or_path)!r}")
    return parse_scenario(path.read_text(), str(path))


def scenario_fields() -> list[str]:
    return [f.name for f in fields(Scenario)]
