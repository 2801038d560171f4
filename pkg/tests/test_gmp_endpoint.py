import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octkit.gmp import (Deliver, DedupWindow, DuplicateSuppressed, Endpoint, Error, Failed, GmpConfig, GmpPacket,
                        Kind, PacketError, PeerUnreachable, TransferTimeout, decode_packet, encode_packet)

from conftest import Wire


def delivers(events):
    return [e for e in events if isinstance(e, Deliver)]


def kinds(datagrams):
    return [decode_packet(d).kind for _, d in datagrams]


def test_session_zero_is_never_chosen():
    with pytest.raises(ValueError):
        Endpoint(session_id=0)
    assert all(Endpoint(rng=random.Random(i)).session_id != 0 for i in range(50))


def test_lossless_send_emits_one_data_and_acks(wire):
    h = wire.a.send("b", b"x" * 100, 0.0)
    assert kinds(wire.a.outbox) == [Kind.DATA]
    assert wire.pump() == 2
    assert h.acked
    assert [e.payload for e in delivers(wire.events["b"])] == [b"x" * 100]
    assert wire.a.pending() == 0


def test_first_data_lost_is_retransmitted_once(wire):
    h = wire.a.send("b", b"hello", 0.0)
    sent = []

    def drop_first(src, data):
        sent.append((src, decode_packet(data).kind))
        return len(sent) == 1

    wire.pump(drop_first)
    assert not h.acked
    wire.tick(0.1)
    wire.pump(drop_first)
    assert h.acked
    assert [k for s, k in sent if s == "a"] == [Kind.DATA, Kind.DATA]
    assert len(delivers(wire.events["b"])) == 1


def test_timer_with_nothing_due_is_empty(wire):
    assert wire.a.handle_timer(5.0) == []
    wire.a.send("b", b"x", 0.0)
    wire.a.drain()
    assert wire.a.handle_timer(0.099) == []


def test_first_retransmission_backs_off_to_200ms(wire):
    wire.a.send("b", b"x", 0.0)
    wire.a.drain()
    assert wire.a.next_deadline() == pytest.approx(0.1)
    wire.a.handle_timer(0.1)
    assert kinds(wire.a.drain()) == [Kind.DATA]
    assert wire.a.next_deadline() == pytest.approx(0.1 + 0.2)


def test_all_attempts_dropped_fails_at_25_5_s():
    ep = Endpoint(GmpConfig(), 7)
    h = ep.send("b", b"x", 0.0)
    transmissions = len(ep.drain())
    failed_at = None
    while failed_at is None:
        t = ep.next_deadline()
        evs = ep.handle_timer(t)
        transmissions += len(ep.drain())
        if any(isinstance(e, Failed) for e in evs):
            failed_at = t
    # 100 ms * (2**8 - 1): every wait of the geometric series, summed
    assert failed_at == pytest.approx(0.1 * (2**8 - 1))
    assert transmissions == 8
    assert h.state == "failed"
    with pytest.raises(PeerUnreachable):
        h.result()
    assert ep.pending() == 0


def test_replay_is_suppressed_but_reacked():
    b = Endpoint(GmpConfig(), 100)
    data = encode_packet(GmpPacket(Kind.DATA, 7, 1, b"p"))
    first = b.handle_datagram("a", data, 0.0)
    assert [type(e) for e in first] == [Deliver]
    assert kinds(b.drain()) == [Kind.ACK]
    again = b.handle_datagram("a", data, 0.0)
    assert [type(e) for e in again] == [DuplicateSuppressed]
    assert kinds(b.drain()) == [Kind.ACK]


def test_new_session_delivers_same_seq_again():
    b = Endpoint(GmpConfig(), 100)
    b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 7, 1, b"old")), 0.0)
    evs = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 9, 1, b"new")), 0.0)
    assert [e.payload for e in delivers(evs)] == [b"new"]
    assert b.peers["a"].last_session_id == 9
    assert 1 in b.peers["a"].delivered
    # a replay from the dead session is still recognised as a duplicate
    stale = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 7, 1, b"old")), 0.0)
    assert [type(e) for e in stale] == [DuplicateSuppressed]
    assert b.peers["a"].last_session_id == 9


def test_late_packet_from_unseen_session_keeps_live_session_intact():
    b = Endpoint(GmpConfig(), 100)
    b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 9, 1, b"live-1")), 0.0)
    # a straggler from an older process this receiver never heard from
    late = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 7, 5, b"late")), 0.0)
    assert [e.payload for e in delivers(late)] == [b"late"]
    b.drain()
    again = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 9, 1, b"live-1")), 0.0)
    assert [type(e) for e in again] == [DuplicateSuppressed]
    nxt = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 9, 2, b"live-2")), 0.0)
    assert [e.payload for e in delivers(nxt)] == [b"live-2"]


def test_retired_session_is_suppressed_without_ack():
    b = Endpoint(GmpConfig(session_memory=2), 100)
    for session in (7, 8, 9):
        b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, session, 1, b"x")), 0.0)
    b.drain()
    evs = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 7, 2, b"y")), 0.0)
    assert [type(e) for e in evs] == [DuplicateSuppressed] and evs[0].stale_session
    assert b.drain() == []
    assert list(b.peers["a"].sessions) == [8, 9]


def test_zero_session_data_is_an_error():
    b = Endpoint(GmpConfig(), 100)
    evs = b.handle_datagram("a", encode_packet(GmpPacket(Kind.DATA, 0, 1, b"")), 0.0)
    assert isinstance(evs[0], Error)


def test_duplicate_ack_changes_nothing(wire):
    wire.a.send("b", b"x", 0.0)
    wire.a.drain()
    ack = encode_packet(GmpPacket(Kind.ACK, 7, 1, b""))
    assert len(wire.a.handle_datagram("b", ack, 0.0)) == 1
    snapshot = (dict(wire.a.peers["b"].retransmit), set(wire.a.peers["b"].unresolved), list(wire.a.outbox))
    assert wire.a.handle_datagram("b", ack, 0.0) == []
    assert snapshot == (dict(wire.a.peers["b"].retransmit), set(wire.a.peers["b"].unresolved),
                        list(wire.a.outbox))


def test_ack_for_other_session_is_ignored(wire):
    h = wire.a.send("b", b"x", 0.0)
    wire.a.handle_datagram("b", encode_packet(GmpPacket(Kind.ACK, 8, 1, b"")), 0.0)
    assert not h.acked


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=64))
def test_arbitrary_bytes_never_raise(raw):
    ep = Endpoint(GmpConfig(), 5)
    evs = ep.handle_datagram("x", raw, 0.0)
    try:
        decode_packet(raw)
    except PacketError:
        assert len(evs) == 1 and isinstance(evs[0], Error)
        assert ep.outbox == [] and ep.peers == {}


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.binary(max_size=40))
def test_wellformed_headers_with_garbage_bodies_never_raise(kind, session, seq, body):
    ep = Endpoint(GmpConfig(), 5)
    ep.send("x", bytes(3000), 0.0)
    raw = encode_packet(GmpPacket(Kind(kind), session, seq, body))
    assert isinstance(ep.handle_datagram("x", raw, 0.0), list)


def test_dedup_window_floor_and_bound():
    w = DedupWindow(8)
    for s in (1, 2, 3, 5):
        w.add(s)
    assert w.floor == 3 and 5 in w and 4 not in w
    w.add(4)
    assert w.floor == 5 and len(w._seen) == 0
    w.add(20)  # far ahead: the floor is forced up so memory stays bounded
    assert w.floor >= 20 - 8
    assert 10 in w


# -- chunked transfers ------------------------------------------------------------


def test_1401_bytes_is_two_chunks(wire):
    payload = bytes(range(256)) * 5 + b"z" * 121
    assert len(payload) == 1401
    h = wire.a.send("b", payload, 0.0)
    assert kinds(wire.a.outbox) == [Kind.CHUNK_INIT]
    frames = []
    wire.pump(lambda src, data: frames.append(decode_packet(data)) or False)
    chunks = [p for p in frames if p.kind is Kind.CHUNK_DATA]
    assert [len(p.payload) - 4 for p in chunks] == [1400, 1]
    assert [p.kind for p in frames].count(Kind.CHUNK_FIN) == 1
    assert h.acked
    assert [e.payload for e in delivers(wire.events["b"])] == [payload]


def test_chunk_window_limits_inflight(wire):
    wire.a.send("b", bytes(1400 * 200), 0.0)
    init = wire.a.drain()
    for _, d in init:
        wire.b.handle_datagram("a", d, 0.0)
    for _, d in wire.b.drain():
        wire.a.handle_datagram("b", d, 0.0)
    assert kinds(wire.a.outbox).count(Kind.CHUNK_DATA) == 64


def test_lossy_large_transfer_reassembles_exactly():
    rng = random.Random(4)
    w = Wire()
    payload = rng.randbytes(300_000)
    h = w.a.send("b", payload, 0.0)
    t = 0.0
    while not h.future.done():
        w.pump(lambda src, data: rng.random() < 0.2)
        t += 0.05
        w.tick(t)
    assert h.acked
    got = delivers(w.events["b"])
    assert len(got) == 1 and got[0].payload == payload
    assert math.ceil(len(payload) / 1400) == max(e.total for e in w.events["b"] if hasattr(e, "total"))


def test_large_transfer_to_silent_peer_times_out():
    ep = Endpoint(GmpConfig(), 3)
    h = ep.send("b", bytes(5000), 0.0)
    while not h.future.done():
        ep.drain()
        ep.handle_timer(ep.next_deadline())
    with pytest.raises(TransferTimeout):
        h.result()
    assert ep.pending() == 0


def test_send_span_bounds_outstanding_messages():
    ep = Endpoint(GmpConfig(dedup_window=16), 3)
    for i in range(40):
        ep.send("b", b"m", 0.0)
    assert len(ep.drain()) == 8
    ack = encode_packet(GmpPacket(Kind.ACK, 3, 1, b""))
    ep.handle_datagram("b", ack, 0.0)
    assert len(ep.drain()) == 1
