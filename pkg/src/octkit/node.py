"""Drivers that bind a GMP :class:`~octkit.gmp.Endpoint` to a datagram port.

Both drivers expose the same small surface used by :mod:`octkit.rpc`:
``address``, ``send(peer, payload)``, ``add_listener(fn)``, ``now()`` and
``call_later(delay, fn)``.
"""

from __future__ import annotations

import logging
import select
import socket
import threading
import time
from collections.abc import Callable

from .gmp import Endpoint, GmpConfig, MessageHandle, ProtocolEvent
from .netsim import SimNet

log = logging.getLogger(__name__)

Listener = Callable[[ProtocolEvent], None]


class SimGmpNode:
    """A GMP process living on one leaf of a :class:`SimNet`."""

    def __init__(self, net: SimNet, address: str, config: GmpConfig | None = None,
                 session_id: int | None = None):
        self.net = net
        self.address = address
        self.config = config or GmpConfig()
        self._listeners: list[Listener] = []
        self.generation = 0
        self.endpoint: Endpoint
        self.restart(session_id)

    def restart(self, session_id: int | None = None) -> None:
        """Simulate a process restart: fresh endpoint and a new session id."""
        self.generation += 1
        rng = self.net.derive_rng("session", self.address, self.generation)
        self.endpoint = Endpoint(self.config, session_id, rng)
        self._timer_at: float | None = None
        self.net.attach(self.address, self._on_datagram)

    def stop(self) -> None:
        self.generation += 1
        self.net.detach(self.address)

    @property
    def session_id(self) -> int:
        return self.endpoint.session_id

    def add_listener(self, fn: Listener) -> None:
        self._listeners.append(fn)

    def remove_listener(self, fn: Listener) -> None:
        self._listeners.remove(fn)

    def now(self) -> float:
        return self.net.now

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.net.call_later(delay, fn, f"{self.address}:call")

    def send(self, peer: str, payload: bytes) -> MessageHandle:
        h = self.endpoint.send(peer, payload, self.net.now)
        self._flush()
        return h

    def _emit(self, events: list[ProtocolEvent]) -> None:
        for ev in events:
            for fn in self._listeners:
                fn(ev)

    def _flush(self) -> None:
        ep = self.endpoint
        if ep.outbox:
            submit = self.net.submit
            src = self.address
            for peer, data in ep.drain():
                submit(src, peer, data)
        d = ep.next_deadline()
        if d is not None and (self._timer_at is None or d < self._timer_at):
            self._timer_at = d
            gen = self.generation
            self.net.call_at(d, lambda: self._on_timer(gen, d), self.address)

    def _on_datagram(self, src: str, data: bytes) -> None:
        events = self.endpoint.handle_datagram(src, data, self.net.now)
        self._flush()
        self._emit(events)

    def _on_timer(self, gen: int, at: float) -> None:
        if gen != self.generation:
            return
        if self._timer_at == at:
            self._timer_at = None
        events = self.endpoint.handle_timer(self.net.now)
        self._flush()
        self._emit(events)


class UdpGmpNode:
    """GMP over a real UDP socket, driven by a background event-loop thread.

    All endpoint mutations happen under one lock; listeners run on the loop
    thread and must not block (:class:`~octkit.rpc.RpcNode` hands handlers to
    a thread pool).
    """

    def __init__(self, bind: tuple[str, int] = ("127.0.0.1", 0), config: GmpConfig | None = None,
                 session_id: int | None = None, tick: float = 0.02):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.setblocking(False)
        self.address = self.sock.getsockname()
        self.endpoint = Endpoint(config, session_id)
        self._lock = threading.RLock()
        self._listeners: list[Listener] = []
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._tick = tick
        self._running = True
        self._thread = threading.Thread(target=self._loop, name=f"gmp-{self.address[1]}", daemon=True)
        self._thread.start()

    def __enter__(self) -> UdpGmpNode:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def session_id(self) -> int:
        return self.endpoint.session_id

    def add_listener(self, fn: Listener) -> None:
        with self._lock:
            self._listeners.append(fn)

    def now(self) -> float:
        return time.monotonic()

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        t = threading.Timer(delay, fn)
        t.daemon = True
        t.start()

    def send(self, peer: tuple[str, int], payload: bytes) -> MessageHandle:
        with self._lock:
            h = self.endpoint.send(peer, payload, self.now())
            self._flush()
        return h

    def lock(self) -> threading.RLock:
        return self._lock

    def close(self) -> None:
        if not self._running:
            return
        self._running = False
        self._wake_w.send(b"x")
        self._thread.join(timeout=2)
        self.sock.close()
        self._wake_r.close()
        self._wake_w.close()

    def _flush(self) -> None:
        for peer, data in self.endpoint.drain():
            try:
                self.sock.sendto(data, peer)
            except OSError as exc:  # treated like a lost datagram; GMP retransmits
                log.debug("sendto %s failed: %s", peer, exc)

    def _loop(self) -> None:
        while self._running:
            with self._lock:
                d = self.endpoint.next_deadline()
            timeout = self._tick if d is None else min(self._tick, max(0.0, d - self.now()))
            ready, _, _ = select.select([self.sock, self._wake_r], [], [], timeout)
            events: list[ProtocolEvent] = []
            with self._lock:
                if self.sock in ready:
                    while True:
                        try:
                            data, src = self.sock.recvfrom(65535)
                        except (BlockingIOError, InterruptedError):
                            break
                        except OSError:
                            break
                        events.extend(self.endpoint.handle_datagram(src, data, self.now()))
                events.extend(self.endpoint.handle_timer(self.now()))
                self._flush()
                listeners = list(self._listeners)
            if self._wake_r in ready:
                try:
                    self._wake_r.recv(64)
                except OSError:
                    pass
            for ev in events:
                for fn in listeners:
                    try:
                        fn(ev)
                    except Exception:
                        log.exception("listener failed on %r", ev)
