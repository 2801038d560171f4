"""MalStone-A and MalStone-B, computed in memory on one machine.

A visit by entity ``e`` to site ``s`` at time ``t`` counts toward the
numerator when ``e`` has a compromise time ``c`` (its earliest flagged record)
and ``c >= t``.  The denominator counts distinct visiting entities.

MalStone-B windows are ``[origin + k*width, origin + (k+1)*width)`` and its
counts are cumulative: window ``k`` covers every visit with
``t < origin + (k+1)*width``.  Its last window therefore equals MalStone-A.

This module is the reference: plain Python over the records, no numpy, so
it can serve as an independent check on :mod:`octkit.executor`.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable
from dataclasses import dataclass, field

from .malgen import DEFAULT_PERIOD_START, EventRecord, Records

RATIO_COLUMNS = ["site_id", "window_index", "numerator", "denominator", "ratio"]
DEFAULT_WINDOW = 7 * 86400


def _columns(records: Records | Iterable[EventRecord]):
    if isinstance(records, Records):
        return (records.timestamp.tolist(), records.site_id.tolist(),
                records.flag.tolist(), records.entity_id.tolist())
    ts, site, flag, ent = [], [], [], []
    for r in records:
        ts.append(r.timestamp)
        site.append(r.site_id)
        flag.append(r.flag)
        ent.append(r.entity_id)
    return ts, site, flag, ent


@dataclass
class RatioTable:
    """Exact per-site (MalStone-A) or per-(site, window) (MalStone-B) counts."""

    mode: str
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ("A", "B"):
            raise ValueError(f"mode must be A or B, got {self.mode!r}")

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, key) -> tuple[int, int]:
        return self.counts[key]

    def ratio(self, key) -> float:
        num, den = self.counts[key]
        return num / den

    def keys(self):
        return self.counts.keys()

    def sorted_items(self):
        return sorted(self.counts.items())

    def last_windows(self) -> dict[int, tuple[int, int]]:
        """MalStone-B: each site's final cumulative window."""
        if self.mode != "B":
            raise ValueError("last_windows applies to MalStone-B tables")
        out: dict[int, tuple[int, tuple[int, int]]] = {}
        for (site, k), v in self.counts.items():
            if site not in out or k > out[site][0]:
                out[site] = (k, v)
        return {s: v for s, (_, v) in out.items()}

    def to_csv(self, comments: Iterable[str] = ()) -> str:
        buf = io.StringIO()
        for c in comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATIO_COLUMNS)
        for key, (num, den) in self.sorted_items():
            site, window = (key, "-") if self.mode == "A" else key
            w.writerow([site, window, num, den, f"{num / den:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> RatioTable:
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        if not rows or rows[0] != RATIO_COLUMNS:
            raise ValueError("not a ratio table: bad header")
        body = rows[1:]
        mode = "A" if not body or body[0][1] == "-" else "B"
        counts = {}
        for site, window, num, den, _ in body:
            key = int(site) if mode == "A" else (int(site), int(window))
            counts[key] = (int(num), int(den))
        return cls(mode, counts)


def compromise_times(records: Records | Iterable[EventRecord]) -> dict[int, int]:
    """Earliest flagged timestamp of every entity that has one."""
    return _comp_from(_columns(records))


def malstone_a(records: Records | Iterable[EventRecord]) -> RatioTable:
    cols = _columns(records)
    comp = _comp_from(cols)
    ts, site, _, ent = cols
    visitors: dict[int, set] = {}
    hit: dict[int, set] = {}
    for t, s, e in zip(ts, site, ent):
        visitors.setdefault(s, set()).add(e)
        c = comp.get(e)
        if c is not None and c >= t:
            hit.setdefault(s, set()).add(e)
    return RatioTable("A", {s: (len(hit.get(s, ())), len(v)) for s, v in visitors.items()})


def _comp_from(cols) -> dict[int, int]:
    ts, _, flag, ent = cols
    comp: dict[int, int] = {}
    for t, f, e in zip(ts, flag, ent):
        if f and (e not in comp or t < comp[e]):
            comp[e] = t
    return comp


def window_index(t: int, width: int, origin: int) -> int:
    return (t - origin) // width


def malstone_b(records: Records | Iterable[EventRecord], window_width: int = DEFAULT_WINDOW,
               window_origin: int | None = None) -> RatioTable:
    """Cumulative windowed ratios.

    ``window_origin`` defaults to the generator's period start.  Visits before
    the origin land in negative windows rather than being dropped.
    """
    if window_width <= 0:
        raise ValueError("window_width must be > 0")
    cols = _columns(records)
    ts, site, _, ent = cols
    if not ts:
        return RatioTable("B")
    comp = _comp_from(cols)
    origin = DEFAULT_PERIOD_START if window_origin is None else window_origin
    first_visit: dict[tuple, int] = {}
    first_hit: dict[tuple, int] = {}
    for t, s, e in zip(ts, site, ent):
        key = (s, e)
        v = first_visit.get(key)
        if v is None or t < v:
            first_visit[key] = t
        c = comp.get(e)
        if c is not None and c >= t:
            v = first_hit.get(key)
            if v is None or t < v:
                first_hit[key] = t
    last = window_index(max(ts), window_width, origin)
    den_inc: dict[int, dict[int, int]] = {}
    num_inc: dict[int, dict[int, int]] = {}
    for (s, _e), t in first_visit.items():
        k = window_index(t, window_width, origin)
        d = den_inc.setdefault(s, {})
        d[k] = d.get(k, 0) + 1
    for (s, _e), t in first_hit.items():
        k = window_index(t, window_width, origin)
        d = num_inc.setdefault(s, {})
        d[k] = d.get(k, 0) + 1
    return RatioTable("B", cumulate(den_inc, num_inc, last))


def cumulate(den_inc: dict[int, dict[int, int]], num_inc: dict[int, dict[int, int]],
             last: int) -> dict[tuple[int, int], tuple[int, int]]:
    """Turn per-window new-entity increments into cumulative (num, den) series."""
    counts = {}
    for s, dinc in den_inc.items():
        ninc = num_inc.get(s, {})
        den = num = 0
        for k in range(min(dinc), last + 1):
            den += dinc.get(k, 0)
            num += ninc.get(k, 0)
            counts[(s, k)] = (num, den)
    return counts


def run_oracle(records: Records | Iterable[EventRecord], mode: str, window_width: int = DEFAULT_WINDOW,
               window_origin: int | None = None) -> RatioTable:
    if mode.upper() == "A":
        return malstone_a(records)
    return malstone_b(records, window_width, window_origin)
