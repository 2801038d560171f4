"""MalGen: synthetic site-visit logs for the MalStone benchmark.

Each record is one 100-byte ASCII line::

    event_id(20) | timestamp(19) | site_id(24) | flag(1) | entity_id(31) \\n

Ids are zero-padded decimals, the timestamp is ISO-8601 ``YYYY-MM-DDTHH:MM:SS``
in UTC, and ``flag = 1`` marks the visit at which the entity was compromised.

Generation model: entities are drawn uniformly, sites by Zipf popularity over a
finite site set, timestamps uniformly over the period.  A fixed fraction of
sites is malicious.  An entity's earliest visit to a malicious site (by
timestamp) flips a ``p_compromise`` coin, so an entity is flagged at most once
and only ever on that visit.
"""

from __future__ import annotations

import datetime as _dt
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_LEN = 100
FIELD_WIDTHS = (20, 19, 24, 1, 31)
_SEP_POS = (20, 40, 65, 67)
_EVENT = slice(0, 20)
_TS = slice(21, 40)
_SITE = slice(41, 65)
_FLAG = 66
_ENTITY = slice(68, 99)
_MAX_TS = int(_dt.datetime(9999, 12, 31, 23, 59, 59, tzinfo=_dt.timezone.utc).timestamp())
_MIN_TS = int(_dt.datetime(1, 1, 1, tzinfo=_dt.timezone.utc).timestamp())
_EPOCH = _dt.datetime(1970, 1, 1, tzinfo=_dt.timezone.utc)
DEFAULT_PERIOD_START = 1230768000  # 2009-01-01T00:00:00Z


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class EventRecord:
    event_id: int
    timestamp: int
    site_id: int
    flag: int
    entity_id: int


def _iso(ts: int) -> str:
    d = _EPOCH + _dt.timedelta(seconds=ts)
    return f"{d.year:04d}-{d.month:02d}-{d.day:02d}T{d.hour:02d}:{d.minute:02d}:{d.second:02d}"


def format_record(r: EventRecord) -> bytes:
    if not 0 <= r.event_id < 10**20 or not 0 <= r.site_id < 10**24 or not 0 <= r.entity_id < 10**31:
        raise RecordFormatError(f"field out of range in {r}")
    if r.flag not in (0, 1):
        raise RecordFormatError(f"flag must be 0 or 1, got {r.flag}")
    if not _MIN_TS <= r.timestamp <= _MAX_TS:
        raise RecordFormatError(f"timestamp {r.timestamp} not representable")
    line = f"{r.event_id:020d}|{_iso(r.timestamp)}|{r.site_id:024d}|{r.flag}|{r.entity_id:031d}\n"
    return line.encode("ascii")


def _digits(b: bytes, what: str) -> int:
    if not b.isdigit():
        raise RecordFormatError(f"non-digit {what} field")
    return int(b)


def parse_record(line: bytes | str) -> EventRecord:
    if isinstance(line, str):
        line = line.encode("ascii", errors="replace")
    if len(line) != RECORD_LEN:
        raise RecordFormatError("wrong record length")
    if line[-1:] != b"\n":
        raise RecordFormatError("missing newline")
    for p in _SEP_POS:
        if line[p:p + 1] != b"|":
            raise RecordFormatError(f"bad separator at offset {p}")
    flag = line[_FLAG:_FLAG + 1]
    if flag not in (b"0", b"1"):
        raise RecordFormatError(f"flag must be 0 or 1, got {flag!r}")
    ts_text = line[_TS].decode("ascii", errors="replace")
    try:
        d = _dt.datetime.strptime(ts_text, "%Y-%m-%dT%H:%M:%S").replace(tzinfo=_dt.timezone.utc)
    except ValueError:
        raise RecordFormatError(f"bad timestamp {ts_text!r}") from None
    if _iso(int((d - _EPOCH).total_seconds())) != ts_text:
        raise RecordFormatError(f"bad timestamp {ts_text!r}")
    return EventRecord(
        _digits(line[_EVENT], "event_id"),
        int((d - _EPOCH).total_seconds()),
        _digits(line[_SITE], "site_id"),
        int(flag),
        _digits(line[_ENTITY], "entity_id"),
    )


# -- columnar batches ------------------------------------------------------------


@dataclass
class Records:
    """Column arrays for a batch of records (uint64 ids, int64 timestamps)."""

    event_id: np.ndarray
    timestamp: np.ndarray
    site_id: np.ndarray
    flag: np.ndarray
    entity_id: np.ndarray

    def __len__(self) -> int:
        return len(self.event_id)

    def __iter__(self) -> Iterator[EventRecord]:
        cols = (self.event_id.tolist(), self.timestamp.tolist(), self.site_id.tolist(),
                self.flag.tolist(), self.entity_id.tolist())
        for row in zip(*cols):
            yield EventRecord(*row)

    @classmethod
    def empty(cls) -> Records:
        u = np.zeros(0, dtype=np.uint64)
        return cls(u, np.zeros(0, dtype=np.int64), u.copy(), np.zeros(0, dtype=np.uint8), u.copy())

    @classmethod
    def from_events(cls, events: Iterable[EventRecord]) -> Records:
        events = list(events)
        if not events:
            return cls.empty()
        cols = list(zip(*((e.event_id, e.timestamp, e.site_id, e.flag, e.entity_id) for e in events)))
        return cls(np.array(cols[0], dtype=np.uint64), np.array(cols[1], dtype=np.int64),
                   np.array(cols[2], dtype=np.uint64), np.array(cols[3], dtype=np.uint8),
                   np.array(cols[4], dtype=np.uint64))

    @classmethod
    def concat(cls, parts: Iterable[Records]) -> Records:
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("event_id", "timestamp", "site_id", "flag", "entity_id")))

    def take(self, idx) -> Records:
        return Records(self.event_id[idx], self.timestamp[idx], self.site_id[idx],
                       self.flag[idx], self.entity_id[idx])

    def to_bytes(self) -> bytes:
        return format_records(self)


def _int_column(block: np.ndarray, width: int) -> np.ndarray:
    # ids are accepted up to 10**19 - 1 so they fit in uint64
    extra = width - 19
    if extra > 0 and np.any(block[:, :extra] != 0):
        raise RecordFormatError("id exceeds 64-bit range")
    digits = block[:, max(extra, 0):].astype(np.uint64)
    powers = np.array([10**k for k in range(digits.shape[1] - 1, -1, -1)], dtype=np.uint64)
    return digits @ powers


def read_records(source: bytes | bytearray | memoryview | str | os.PathLike, *,
                 context: str | None = None) -> Records:
    """Parse a whole record file (or its bytes) with vectorized validation."""
    if isinstance(source, (str, os.PathLike)):
        context = context or str(source)
        data = Path(source).read_bytes()
    else:
        data = bytes(source)
    where = context or "<bytes>"
    if len(data) % RECORD_LEN:
        raise RecordFormatError(f"{where}: size {len(data)} is not a multiple of {RECORD_LEN} "
                                f"(wrong record length near offset {len(data) // RECORD_LEN * RECORD_LEN})")
    n = len(data) // RECORD_LEN
    if n == 0:
        return Records.empty()
    a = np.frombuffer(data, dtype=np.uint8).reshape(n, RECORD_LEN)

    def fail(mask: np.ndarray, what: str):
        row = int(np.argmax(mask))
        raise RecordFormatError(f"{where}: {what} in record {row} (offset {row * RECORD_LEN})")

    bad = a[:, -1] != ord("\n")
    for p in _SEP_POS:
        bad |= a[:, p] != ord("|")
    if bad.any():
        fail(bad, "bad separator or newline")
    flag = a[:, _FLAG] - ord("0")
    if (flag > 1).any():
        fail(flag > 1, "flag not in {0,1}")
    d = a - ord("0")
    digit_cols = list(range(0, 20)) + list(range(41, 65)) + list(range(68, 99))
    bad = (d[:, digit_cols] > 9).any(axis=1)
    if bad.any():
        fail(bad, "non-digit id field")
    ts = a[:, _TS]
    ts_digits = d[:, [21, 22, 23, 24, 26, 27, 29, 30, 32, 33, 35, 36, 38, 39]]
    bad = (ts_digits > 9).any(axis=1)
    for pos, ch in ((25, "-"), (28, "-"), (31, "T"), (34, ":"), (37, ":")):
        bad |= a[:, pos] != ord(ch)
    if bad.any():
        fail(bad, "bad timestamp")
    try:
        stamps = ts.copy().view("S19").ravel().astype("U19").astype("datetime64[s]")
    except ValueError:
        # locate the offending row for the diagnostic
        for i in range(n):
            try:
                np.datetime64(bytes(ts[i]).decode(), "s")
            except ValueError:
                raise RecordFormatError(f"{where}: bad timestamp in record {i} (offset {i * RECORD_LEN})") from None
        raise
    timestamp = stamps.astype(np.int64)
    # numpy normalises some out-of-range clock fields; reject those
    sec = d[:, 38].astype(np.int64) * 10 + d[:, 39]
    minute = d[:, 35].astype(np.int64) * 10 + d[:, 36]
    hour = d[:, 32].astype(np.int64) * 10 + d[:, 33]
    bad = (sec > 59) | (minute > 59) | (hour > 23)
    if bad.any():
        fail(bad, "bad timestamp")
    return Records(
        _int_column(d[:, _EVENT], 20),
        timestamp,
        _int_column(d[:, _SITE], 24),
        flag.astype(np.uint8),
        _int_column(d[:, _ENTITY], 31),
    )


def _zero_padded(values: np.ndarray, width: int) -> np.ndarray:
    """uint64 column -> (n, width) ASCII digit matrix."""
    n = len(values)
    out = np.full((n, width), ord("0"), dtype=np.uint8)
    v = values.astype(np.uint64).copy()
    for col in range(width - 1, max(width - 21, -1), -1):
        out[:, col] = (v % np.uint64(10)).astype(np.uint8) + ord("0")
        v //= np.uint64(10)
    return out


def format_records(recs: Records) -> bytes:
    n = len(recs)
    if n == 0:
        return b""
    if recs.timestamp.min() < _MIN_TS or recs.timestamp.max() > _MAX_TS:
        raise RecordFormatError("timestamp not representable")
    if recs.flag.max() > 1:
        raise RecordFormatError("flag must be 0 or 1")
    a = np.empty((n, RECORD_LEN), dtype=np.uint8)
    a[:, _EVENT] = _zero_padded(recs.event_id, 20)
    a[:, _SITE] = _zero_padded(recs.site_id, 24)
    a[:, _ENTITY] = _zero_padded(recs.entity_id, 31)
    for p in _SEP_POS:
        a[:, p] = ord("|")
    a[:, _FLAG] = recs.flag + ord("0")
    a[:, -1] = ord("\n")
    iso = recs.timestamp.astype("datetime64[s]").astype("U19").astype("S19")
    a[:, _TS] = np.frombuffer(iso.tobytes(), dtype=np.uint8).reshape(n, 19)
    return a.tobytes()


# -- generation ---------------------------------------------------------------


class GenConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    num_records: int
    num_entities: int
    num_sites: int
    fraction_malicious_sites: float = 0.01
    p_compromise: float = 0.2
    zipf_exponent: float = 1.0
    period_start: int = DEFAULT_PERIOD_START
    period_days: float = 56
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_records", "num_entities", "num_sites"):
            if getattr(self, name) < 0:
                raise GenConfigError(f"{name} must be >= 0")
        if self.num_records and (self.num_entities < 1 or self.num_sites < 1):
            raise GenConfigError("records need at least one entity and one site")
        for name in ("fraction_malicious_sites", "p_compromise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GenConfigError(f"{name} must be in [0, 1]")
        if self.zipf_exponent < 0:
            raise GenConfigError("zipf_exponent must be >= 0")
        if self.period_days <= 0:
            raise GenConfigError("period_days must be > 0")
        if self.num_entities >= 2**63 or self.num_sites >= 2**63:
            raise GenConfigError("id spaces must fit in 63 bits")

    @property
    def period_seconds(self) -> int:
        return int(round(self.period_days * 86400))

    def malicious_count(self) -> int:
        if self.fraction_malicious_sites == 0 or self.num_sites == 0:
            return 0
        return max(1, round(self.fraction_malicious_sites * self.num_sites))


def malicious_sites(cfg: GenConfig) -> np.ndarray:
    """Sorted ids of the malicious sites for ``cfg`` (derived from its seed)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    k = cfg.malicious_count()
    if k == 0:
        return np.zeros(0, dtype=np.uint64)
    return np.sort(rng.choice(cfg.num_sites, size=k, replace=False)).astype(np.uint64)


def generate_records(cfg: GenConfig) -> Records:
    cfg.validate()
    n = cfg.num_records
    if n == 0:
        return Records.empty()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    entity = rng.integers(0, cfg.num_entities, size=n, dtype=np.uint64)
    ranks = np.arange(1, cfg.num_sites + 1, dtype=np.float64)
    weights = ranks ** -cfg.zipf_exponent
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    site = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), cfg.num_sites - 1).astype(np.uint64)
    ts = cfg.period_start + rng.integers(0, cfg.period_seconds, size=n, dtype=np.int64)
    coins = rng.random(n) < cfg.p_compromise

    flag = np.zeros(n, dtype=np.uint8)
    bad_sites = malicious_sites(cfg)
    if len(bad_sites) and cfg.p_compromise > 0:
        mal = np.flatnonzero(np.isin(site, bad_sites))
        if len(mal):
            # earliest malicious visit per entity (ties: generation order)
            order = mal[np.lexsort((mal, ts[mal], entity[mal]))]
            first = np.ones(len(order), dtype=bool)
            first[1:] = entity[order][1:] != entity[order][:-1]
            firsts = order[first]
            flag[firsts[coins[firsts]]] = 1
    return Records(np.arange(n, dtype=np.uint64), ts, site, flag, entity)


def generate(cfg: GenConfig) -> Iterator[EventRecord]:
    """The generated stream as :class:`EventRecord` objects."""
    return iter(generate_records(cfg))


def write_records(path: str | os.PathLike, cfg: GenConfig) -> int:
    data = format_records(generate_records(cfg))
    Path(path).write_bytes(data)
    return len(data) // RECORD_LEN


def split(path: str | os.PathLike, k: int, out_dir: str | os.PathLike | None = None) -> list[Path]:
    """Round-robin the records of ``path`` into ``k`` partition files."""
    if k < 1:
        raise ValueError("k must be >= 1")
    src = Path(path)
    try:
        data = src.read_bytes()
    except OSError as exc:
        raise OSError(f"{src}: {exc.strerror or exc}") from exc
    if len(data) % RECORD_LEN:
        raise RecordFormatError(f"{src}: size {len(data)} is not a multiple of {RECORD_LEN}")
    rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_LEN)
    dest = Path(out_dir) if out_dir is not None else src.parent
    dest.mkdir(parents=True, exist_ok=True)
    paths = []
    for j in range(k):
        p = dest / f"{src.stem}.part{j:03d}{src.suffix}"
        try:
            p.write_bytes(rows[j::k].tobytes())
        except OSError as exc:
            raise OSError(f"{p}: {exc.strerror or exc}") from exc
        paths.append(p)
    return paths


def split_bytes(data: bytes, k: int) -> list[bytes]:
    rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_LEN)
    return [rows[j::k].tobytes() for j in range(k)]
