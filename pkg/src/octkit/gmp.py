"""GMP: connectionless reliable messaging over a single datagram port.

The :class:`Endpoint` here is a pure state machine.  It never touches a
socket or a clock; drivers (:mod:`octkit.node`) feed it datagrams, timer ticks
and send requests, and drain the datagrams it wants emitted from
:attr:`Endpoint.outbox`.

Wire header (12 bytes, big-endian)::

    offset 0   version      u8   (always 1)
    offset 1   kind         u8
    offset 2   session_id   u32
    offset 6   seq          u32
    offset 10  payload_len  u16
    offset 12  payload

Small messages travel as one DATA packet.  Messages larger than
``max_inline_payload`` use a selective-repeat chunk transfer:
CHUNK_INIT, then CHUNK_DATA frames within a fixed window (each acknowledged by
CHUNK_ACK), then CHUNK_FIN.  See ``docs/wire.md`` for the payload layouts.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
import struct
from collections import OrderedDict, deque
from collections.abc import Hashable
from concurrent.futures import Future
from dataclasses import dataclass, field

VERSION = 1
HEADER = struct.Struct("!BBIIH")
HEADER_SIZE = HEADER.size  # 12
MAX_INLINE_PAYLOAD = 1400
CHUNK_INDEX = struct.Struct("!I")
CHUNK_INIT_BODY = struct.Struct("!QIH")  # total length, transfer id, chunk size
FIN_INDEX = 0xFFFFFFFF
U32 = 0xFFFFFFFF

Address = Hashable


class Kind(enum.IntEnum):
    DATA = 1
    ACK = 2
    CHUNK_INIT = 3
    CHUNK_DATA = 4
    CHUNK_ACK = 5
    CHUNK_FIN = 6


_KINDS = {int(k): k for k in Kind}


class PacketError(ValueError):
    """Raised by :func:`decode_packet` for anything that is not a valid packet."""


class PeerUnreachable(Exception):
    pass


class TransferTimeout(PeerUnreachable):
    """A chunk (or the INIT/FIN of a transfer) exhausted its retries."""


def _max_payload(kind: Kind) -> int:
    # chunk frames carry a 4-byte index in front of up to 1400 data bytes
    return MAX_INLINE_PAYLOAD + CHUNK_INDEX.size if kind is Kind.CHUNK_DATA else MAX_INLINE_PAYLOAD


@dataclass(frozen=True, slots=True)
class GmpPacket:
    kind: Kind
    session_id: int
    seq: int
    payload: bytes = b""
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)


def encode_packet(p: GmpPacket) -> bytes:
    if p.version != VERSION:
        raise PacketError(f"unsupported version {p.version}")
    if len(p.payload) > _max_payload(p.kind):
        raise PacketError(f"payload of {len(p.payload)} bytes exceeds limit for {p.kind.name}")
    if not (0 <= p.session_id <= U32 and 0 <= p.seq <= U32):
        raise PacketError("session_id and seq must fit in 32 bits")
    return HEADER.pack(p.version, p.kind, p.session_id, p.seq, len(p.payload)) + p.payload


def decode_packet(b: bytes) -> GmpPacket:
    if len(b) < HEADER_SIZE:
        raise PacketError("truncated header")
    version, kind, session, seq, plen = HEADER.unpack_from(b)
    if version != VERSION:
        raise PacketError(f"unknown version {version}")
    k = _KINDS.get(kind)
    if k is None:
        raise PacketError(f"unknown kind {kind}")
    if len(b) - HEADER_SIZE != plen:
        raise PacketError(f"payload_len mismatch: header says {plen}, got {len(b) - HEADER_SIZE}")
    if plen > _max_payload(k):
        raise PacketError(f"payload too large for {k.name}")
    return GmpPacket(k, session, seq, bytes(b[HEADER_SIZE:]))


def _frame(kind: Kind, session: int, seq: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(VERSION, kind, session, seq, len(payload)) + payload


# -- protocol events -----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Deliver:
    peer: Address
    session_id: int
    seq: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class DuplicateSuppressed:
    peer: Address
    session_id: int
    seq: int
    stale_session: bool = False


@dataclass(frozen=True, slots=True)
class AckProcessed:
    peer: Address
    seq: int


@dataclass(frozen=True, slots=True)
class ChunkProgress:
    peer: Address
    transfer_id: int
    done: int
    total: int
    outbound: bool


@dataclass(frozen=True, slots=True)
class Error:
    peer: Address
    reason: str


@dataclass(frozen=True, slots=True)
class Retransmit:
    peer: Address
    seq: int
    attempts: int


@dataclass(frozen=True, slots=True)
class Failed:
    peer: Address
    seq: int
    reason: str


ProtocolEvent = Deliver | DuplicateSuppressed | AckProcessed | ChunkProgress | Error | Retransmit | Failed


# -- state ---------------------------------------------------------------------


@dataclass
class GmpConfig:
    rto_initial: float = 0.1
    rto_backoff_factor: float = 2.0
    max_retries: int = 8
    max_inline_payload: int = MAX_INLINE_PAYLOAD
    chunk_window: int = 64
    dedup_window: int = 4096
    max_message_size: int = 1 << 30
    send_span: int = 0  # 0 = dedup_window // 2
    session_memory: int = 16  # sender sessions per peer with live dedup state

    def __post_init__(self):
        if not 0 < self.max_inline_payload <= MAX_INLINE_PAYLOAD:
            raise ValueError("max_inline_payload must be in (0, 1400]")
        if self.max_retries < 1 or self.chunk_window < 1 or self.dedup_window < 2:
            raise ValueError("max_retries and chunk_window must be >= 1, dedup_window >= 2")
        if not self.send_span:
            self.send_span = self.dedup_window // 2
        if not 0 < self.send_span < self.dedup_window:
            raise ValueError("send_span must be in (0, dedup_window)")
        if self.session_memory < 1:
            raise ValueError("session_memory must be >= 1")
        if self.rto_initial <= 0 or self.rto_backoff_factor < 1:
            raise ValueError("rto_initial must be > 0 and rto_backoff_factor >= 1")


class MessageHandle:
    """Sender-side view of one message; resolves to acked or failed."""

    __slots__ = ("peer", "session_id", "seq", "size", "future")

    def __init__(self, peer: Address, session_id: int, seq: int, size: int):
        self.peer = peer
        self.session_id = session_id
        self.seq = seq
        self.size = size
        self.future: Future = Future()

    @property
    def state(self) -> str:
        if not self.future.done():
            return "pending"
        return "failed" if self.future.exception() is not None else "acked"

    @property
    def acked(self) -> bool:
        return self.state == "acked"

    def result(self, timeout: float | None = None) -> None:
        return self.future.result(timeout)

    def __repr__(self) -> str:
        return f"MessageHandle(peer={self.peer!r}, seq={self.seq}, size={self.size}, {self.state})"


class DedupWindow:
    """Delivered sequence numbers for one peer session.

    Everything at or below ``floor`` has been delivered; delivered seqs above
    it are kept in a set.  When the highest delivered seq runs more than
    ``size`` ahead of the floor the floor is forced up, which bounds memory.
    Senders keep their unresolved seq span below ``size`` (see
    :attr:`GmpConfig.send_span`), so a forced floor only skips seqs whose
    sender already gave up.
    """

    def __init__(self, size: int):
        self.size = size
        self.floor = 0
        self.high = 0
        self._seen: set[int] = set()

    def __contains__(self, seq: int) -> bool:
        return seq <= self.floor or seq in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def add(self, seq: int) -> None:
        if seq <= self.floor:
            return
        seen = self._seen
        seen.add(seq)
        if seq > self.high:
            self.high = seq
        floor = self.floor
        while floor + 1 in seen:
            floor += 1
            seen.discard(floor)
        if self.high - floor > self.size:
            floor = self.high - self.size
            self._seen = seen = {s for s in seen if s > floor}
            while floor + 1 in seen:
                floor += 1
                seen.discard(floor)
        self.floor = floor

    def seqs(self) -> frozenset[int]:
        return frozenset(self._seen)


@dataclass(slots=True)
class _Entry:
    data: bytes
    deadline: float
    attempts: int
    key: tuple


class _Outbound:
    __slots__ = ("tid", "payload", "chunk_size", "nchunks", "next_idx", "inflight", "acked", "handle", "phase")

    def __init__(self, tid: int, payload: bytes, chunk_size: int, handle: MessageHandle):
        self.tid = tid
        self.payload = payload
        self.chunk_size = chunk_size
        self.nchunks = -(-len(payload) // chunk_size)
        self.next_idx = 0
        self.inflight = 0
        self.acked = 0
        self.handle = handle
        self.phase = "init"


class _Inbound:
    __slots__ = ("tid", "total_len", "chunk_size", "nchunks", "chunks", "received", "complete")

    def __init__(self, tid: int, total_len: int, chunk_size: int):
        self.tid = tid
        self.total_len = total_len
        self.chunk_size = chunk_size
        self.nchunks = -(-total_len // chunk_size)
        self.chunks: list[bytes | None] = [None] * self.nchunks
        self.received = 0
        self.complete = False

    def expected_len(self, idx: int) -> int:
        if idx == self.nchunks - 1:
            return self.total_len - idx * self.chunk_size
        return self.chunk_size


class InboundSession:
    """Receive-side dedup and reassembly state for one sender session."""

    __slots__ = ("address", "session_id", "delivered", "inbound")

    def __init__(self, address: Address, session_id: int, dedup_window: int):
        self.address = address
        self.session_id = session_id
        self.delivered = DedupWindow(dedup_window)
        self.inbound: dict[int, _Inbound] = {}


@dataclass
class PeerState:
    address: Address
    dedup_window: int = 4096
    session_memory: int = 16
    last_session_id: int = 0
    sessions: OrderedDict = field(default_factory=OrderedDict)
    retired_sessions: deque = field(default_factory=lambda: deque(maxlen=64))
    next_seq: int = 1
    retransmit: dict[tuple, _Entry] = field(default_factory=dict)
    handles: dict[int, MessageHandle] = field(default_factory=dict)
    outbound: dict[int, _Outbound] = field(default_factory=dict)
    unresolved: set[int] = field(default_factory=set)
    unresolved_heap: list[int] = field(default_factory=list)
    send_queue: deque = field(default_factory=deque)

    def inbound_session(self, session_id: int) -> InboundSession | None:
        """State for ``session_id``, created on first sight; None if retired.

        Session ids carry no order, so a late packet from an older process
        cannot be told apart from a new one.  Keeping the last few sessions
        side by side (rather than resetting on every change) means such a
        packet never evicts the live session's dedup state.
        """
        st = self.sessions.get(session_id)
        if st is not None:
            self.sessions.move_to_end(session_id)
            return st
        if session_id in self.retired_sessions:
            return None
        st = self.sessions[session_id] = InboundSession(self.address, session_id, self.dedup_window)
        self.last_session_id = session_id
        if len(self.sessions) > self.session_memory:
            old, _ = self.sessions.popitem(last=False)
            self.retired_sessions.append(old)
        return st

    @property
    def delivered(self) -> DedupWindow:
        return self.sessions[self.last_session_id].delivered

    def lowest_unresolved(self) -> int | None:
        heap = self.unresolved_heap
        while heap and heap[0] not in self.unresolved:
            heapq.heappop(heap)
        return heap[0] if heap else None


class Endpoint:
    """GMP protocol state for one process bound to one datagram port."""

    def __init__(self, config: GmpConfig | None = None, session_id: int | None = None,
                 rng: random.Random | None = None):
        self.config = config or GmpConfig()
        if session_id is None:
            session_id = (rng or random.SystemRandom()).randrange(1, U32 + 1)
        if not 0 < session_id <= U32:
            raise ValueError("session_id must be a nonzero 32-bit value")
        self.session_id = session_id
        self.peers: dict[Address, PeerState] = {}
        self.outbox: list[tuple[Address, bytes]] = []
        self._timers: list[tuple[float, int, Address, tuple]] = []
        self._tick = itertools.count()
        self._backoff = [self.config.rto_initial * self.config.rto_backoff_factor ** a
                         for a in range(self.config.max_retries + 1)]

    def peer(self, address: Address) -> PeerState:
        ps = self.peers.get(address)
        if ps is None:
            ps = self.peers[address] = PeerState(address, self.config.dedup_window, self.config.session_memory)
        return ps

    def drain(self) -> list[tuple[Address, bytes]]:
        out, self.outbox = self.outbox, []
        return out

    # -- sending ---------------------------------------------------------------

    def send(self, peer: Address, payload: bytes, now: float) -> MessageHandle:
        """Queue one message; larger than ``max_inline_payload`` goes chunked."""
        payload = bytes(payload)
        if len(payload) > self.config.max_inline_payload:
            return self.send_large(peer, payload, now)
        return self._enqueue(self.peer(peer), payload, False, now)

    def send_large(self, peer: Address, payload: bytes, now: float) -> MessageHandle:
        payload = bytes(payload)
        if len(payload) > self.config.max_message_size:
            raise ValueError(f"message of {len(payload)} bytes exceeds max_message_size")
        return self._enqueue(self.peer(peer), payload, True, now)

    def _enqueue(self, ps: PeerState, payload: bytes, large: bool, now: float) -> MessageHandle:
        seq = ps.next_seq
        ps.next_seq += 1
        h = MessageHandle(ps.address, self.session_id, seq, len(payload))
        ps.send_queue.append((seq, payload, large, h))
        self._pump(ps, now)
        return h

    def _pump(self, ps: PeerState, now: float) -> None:
        # keep every unresolved seq within send_span of the lowest one so the
        # receiver's bounded dedup window never has to forget a pending seq
        queue = ps.send_queue
        span = self.config.send_span
        while queue:
            seq = queue[0][0]
            low = ps.lowest_unresolved()
            if low is not None and seq - low >= span:
                return
            seq, payload, large, h = queue.popleft()
            ps.unresolved.add(seq)
            heapq.heappush(ps.unresolved_heap, seq)
            if large:
                chunk = self.config.max_inline_payload
                ps.outbound[seq] = _Outbound(seq, payload, chunk, h)
                data = _frame(Kind.CHUNK_INIT, self.session_id, seq,
                              CHUNK_INIT_BODY.pack(len(payload), seq, chunk))
                self._arm(ps, ("i", seq), data, now)
            else:
                ps.handles[seq] = h
                data = _frame(Kind.DATA, self.session_id, seq, payload)
                self._arm(ps, ("m", seq), data, now)
            self.outbox.append((ps.address, data))

    def _resolved(self, ps: PeerState, seq: int, now: float) -> None:
        ps.unresolved.discard(seq)
        if ps.send_queue:
            self._pump(ps, now)

    def _arm(self, ps: PeerState, key: tuple, data: bytes, now: float) -> None:
        deadline = now + self._backoff[0]
        ps.retransmit[key] = _Entry(data, deadline, 0, key)
        heapq.heappush(self._timers, (deadline, next(self._tick), ps.address, key))

    def _fill_window(self, ps: PeerState, t: _Outbound, now: float, events: list) -> None:
        window = self.config.chunk_window
        while t.inflight < window and t.next_idx < t.nchunks:
            idx = t.next_idx
            lo = idx * t.chunk_size
            body = CHUNK_INDEX.pack(idx) + t.payload[lo:lo + t.chunk_size]
            data = _frame(Kind.CHUNK_DATA, self.session_id, t.tid, body)
            self.outbox.append((ps.address, data))
            self._arm(ps, ("c", t.tid, idx), data, now)
            t.next_idx += 1
            t.inflight += 1

    # -- timers ----------------------------------------------------------------

    def next_deadline(self) -> float | None:
        timers = self._timers
        while timers:
            deadline, _, addr, key = timers[0]
            ps = self.peers.get(addr)
            entry = ps.retransmit.get(key) if ps is not None else None
            if entry is not None and entry.deadline == deadline:
                return deadline
            heapq.heappop(timers)
        return None

    def pending(self) -> int:
        """Number of packets awaiting acknowledgment."""
        return sum(len(ps.retransmit) for ps in self.peers.values())

    def handle_timer(self, now: float) -> list[ProtocolEvent]:
        events: list[ProtocolEvent] = []
        timers = self._timers
        max_retries = self.config.max_retries
        while timers and timers[0][0] <= now:
            deadline, _, addr, key = heapq.heappop(timers)
            ps = self.peers.get(addr)
            entry = ps.retransmit.get(key) if ps is not None else None
            if entry is None or entry.deadline != deadline:
                continue
            if entry.attempts + 1 >= max_retries:
                self._fail(ps, key, events, now)
                continue
            entry.attempts += 1
            entry.deadline = now + self._backoff[entry.attempts]
            heapq.heappush(timers, (entry.deadline, next(self._tick), addr, key))
            self.outbox.append((addr, entry.data))
            events.append(Retransmit(addr, key[1], entry.attempts))
        return events

    def _fail(self, ps: PeerState, key: tuple, events: list, now: float) -> None:
        if key[0] == "m":
            seq = key[1]
            del ps.retransmit[key]
            h = ps.handles.pop(seq, None)
            if h is not None:
                h.future.set_exception(PeerUnreachable(f"no ACK from {ps.address!r} for seq {seq}"))
            events.append(Failed(ps.address, seq, "PeerUnreachable"))
            self._resolved(ps, seq, now)
            return
        tid = key[1]
        t = ps.outbound.pop(tid, None)
        for k in [k for k in ps.retransmit if k[0] != "m" and k[1] == tid]:
            del ps.retransmit[k]
        if t is not None:
            t.handle.future.set_exception(TransferTimeout(f"transfer {tid} to {ps.address!r} timed out"))
        events.append(Failed(ps.address, tid, "TransferTimeout"))
        self._resolved(ps, tid, now)

    # -- receiving -------------------------------------------------------------

    def handle_datagram(self, peer: Address, b: bytes, now: float) -> list[ProtocolEvent]:
        try:
            pkt = decode_packet(b)
        except PacketError as exc:
            return [Error(peer, str(exc))]
        kind = pkt.kind
        if kind is Kind.ACK or kind is Kind.CHUNK_ACK:
            return self._on_ack(peer, pkt, now)
        if pkt.session_id == 0:
            return [Error(peer, "reserved session id 0")]
        st = self.peer(peer).inbound_session(pkt.session_id)
        if st is None:
            # a retired session: its dedup state is gone, so neither deliver
            # nor ACK (an ACK could confirm data that never arrived)
            return [DuplicateSuppressed(peer, pkt.session_id, pkt.seq, stale_session=True)]
        if kind is Kind.DATA:
            return self._on_data(st, pkt)
        if kind is Kind.CHUNK_INIT:
            return self._on_chunk_init(st, pkt)
        if kind is Kind.CHUNK_DATA:
            return self._on_chunk_data(st, pkt)
        return self._on_chunk_fin(st, pkt)

    def _on_data(self, ps: InboundSession, pkt: GmpPacket) -> list[ProtocolEvent]:
        # duplicates are re-ACKed: the sender may have missed the first ACK
        self.outbox.append((ps.address, _frame(Kind.ACK, pkt.session_id, pkt.seq)))
        if pkt.seq in ps.delivered:
            return [DuplicateSuppressed(ps.address, pkt.session_id, pkt.seq)]
        ps.delivered.add(pkt.seq)
        return [Deliver(ps.address, pkt.session_id, pkt.seq, pkt.payload)]

    def _on_chunk_init(self, ps: InboundSession, pkt: GmpPacket) -> list[ProtocolEvent]:
        tid = pkt.seq
        if tid in ps.delivered or tid in ps.inbound:
            self.outbox.append((ps.address, _frame(Kind.ACK, pkt.session_id, tid)))
            return [DuplicateSuppressed(ps.address, pkt.session_id, tid)]
        if len(pkt.payload) != CHUNK_INIT_BODY.size:
            return [Error(ps.address, "malformed CHUNK_INIT")]
        total, body_tid, chunk_size = CHUNK_INIT_BODY.unpack(pkt.payload)
        if body_tid != tid or chunk_size == 0 or total == 0 or chunk_size > MAX_INLINE_PAYLOAD:
            return [Error(ps.address, "malformed CHUNK_INIT")]
        if total > self.config.max_message_size:
            return [Error(ps.address, f"transfer of {total} bytes exceeds max_message_size")]
        t = ps.inbound[tid] = _Inbound(tid, total, chunk_size)
        self.outbox.append((ps.address, _frame(Kind.ACK, pkt.session_id, tid)))
        return [ChunkProgress(ps.address, tid, 0, t.nchunks, False)]

    def _on_chunk_data(self, ps: InboundSession, pkt: GmpPacket) -> list[ProtocolEvent]:
        tid = pkt.seq
        if len(pkt.payload) < CHUNK_INDEX.size:
            return [Error(ps.address, "malformed CHUNK_DATA")]
        (idx,) = CHUNK_INDEX.unpack_from(pkt.payload)
        ack = _frame(Kind.CHUNK_ACK, pkt.session_id, tid, pkt.payload[:CHUNK_INDEX.size])
        t = ps.inbound.get(tid)
        if t is None or t.complete:
            # only re-ACK chunks of transfers we know were delivered; acking an
            # unknown transfer would let the sender believe lost data arrived
            if t is not None or tid in ps.delivered:
                self.outbox.append((ps.address, ack))
                return []
            return [Error(ps.address, f"chunk for unknown transfer {tid}")]
        data = pkt.payload[CHUNK_INDEX.size:]
        if idx >= t.nchunks or len(data) != t.expected_len(idx):
            return [Error(ps.address, f"bad chunk {idx} for transfer {tid}")]
        self.outbox.append((ps.address, ack))
        if t.chunks[idx] is None:
            t.chunks[idx] = data
            t.received += 1
            if t.received == t.nchunks:
                payload = b"".join(t.chunks)
                t.chunks = []
                t.complete = True
                ps.delivered.add(tid)
                return [ChunkProgress(ps.address, tid, t.received, t.nchunks, False),
                        Deliver(ps.address, pkt.session_id, tid, payload)]
        return [ChunkProgress(ps.address, tid, t.received, t.nchunks, False)]

    def _on_chunk_fin(self, ps: InboundSession, pkt: GmpPacket) -> list[ProtocolEvent]:
        tid = pkt.seq
        fin_ack = _frame(Kind.CHUNK_ACK, pkt.session_id, tid, CHUNK_INDEX.pack(FIN_INDEX))
        t = ps.inbound.get(tid)
        if tid in ps.delivered or (t is not None and t.complete):
            ps.inbound.pop(tid, None)
            self.outbox.append((ps.address, fin_ack))
            return []
        return [Error(ps.address, f"FIN for incomplete transfer {tid}")]

    def _on_ack(self, peer: Address, pkt: GmpPacket, now: float) -> list[ProtocolEvent]:
        if pkt.session_id != self.session_id:
            return []  # addressed to a previous incarnation of this process
        ps = self.peers.get(peer)
        if ps is None:
            return []
        seq = pkt.seq
        if pkt.kind is Kind.ACK:
            if ps.retransmit.pop(("m", seq), None) is not None:
                h = ps.handles.pop(seq, None)
                if h is not None:
                    h.future.set_result(None)
                self._resolved(ps, seq, now)
                return [AckProcessed(peer, seq)]
            if ps.retransmit.pop(("i", seq), None) is not None:
                t = ps.outbound[seq]
                t.phase = "data"
                events: list[ProtocolEvent] = [AckProcessed(peer, seq)]
                self._fill_window(ps, t, now, events)
                return events
            return []
        if len(pkt.payload) != CHUNK_INDEX.size:
            return [Error(peer, "malformed CHUNK_ACK")]
        (idx,) = CHUNK_INDEX.unpack(pkt.payload)
        if idx == FIN_INDEX:
            if ps.retransmit.pop(("f", seq), None) is None:
                return []
            t = ps.outbound.pop(seq)
            t.handle.future.set_result(None)
            self._resolved(ps, seq, now)
            return [AckProcessed(peer, seq)]
        if ps.retransmit.pop(("c", seq, idx), None) is None:
            return []
        t = ps.outbound[seq]
        t.acked += 1
        t.inflight -= 1
        events = [ChunkProgress(peer, seq, t.acked, t.nchunks, True)]
        if t.acked == t.nchunks:
            t.phase = "fin"
            data = _frame(Kind.CHUNK_FIN, self.session_id, seq)
            self.outbox.append((peer, data))
            self._arm(ps, ("f", seq), data, now)
        else:
            self._fill_window(ps, t, now, events)
        return events
