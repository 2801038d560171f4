"""Request/response RPC carried in single GMP messages.

A request is one GMP message; the response is another GMP message in the
opposite direction whose envelope names the request's GMP ``(session, seq)``.
Retransmission is entirely GMP's job, so the RPC layer never re-issues a
request under a new seq.  Servers cache responses by request identity, which
makes handler execution at-most-once.

Envelope layout (big-endian)::

    offset 0   flags         u8   bit 0: response, bit 1: error
    offset 1   corr_session  u32
    offset 5   corr_seq      u32
    offset 9   method_len    u8
    offset 10  method        method_len bytes (UTF-8)
    ...        body          remaining bytes
"""

from __future__ import annotations

import logging
import struct
import threading
from collections import Counter, OrderedDict
from collections.abc import Callable, Hashable
from concurrent.futures import Executor, Future
from dataclasses import dataclass

from .gmp import Deliver, PeerUnreachable, ProtocolEvent

log = logging.getLogger(__name__)

ENVELOPE = struct.Struct("!BIIB")
FLAG_RESPONSE = 0x01
FLAG_ERROR = 0x02

Handler = Callable[[bytes], "bytes | Future"]


class RpcError(Exception):
    pass


class Timeout(RpcError, TimeoutError):
    pass


class RemoteError(RpcError):
    """The server answered with an error response."""


class DuplicateMethod(RpcError, ValueError):
    pass


class EnvelopeError(RpcError, ValueError):
    pass


@dataclass(frozen=True, slots=True)
class RpcEnvelope:
    flags: int
    corr_session: int
    corr_seq: int
    method: str
    body: bytes = b""

    @property
    def is_response(self) -> bool:
        return bool(self.flags & FLAG_RESPONSE)

    @property
    def is_error(self) -> bool:
        return bool(self.flags & FLAG_ERROR)


def encode_envelope(env: RpcEnvelope) -> bytes:
    m = env.method.encode()
    if len(m) > 255:
        raise EnvelopeError(f"method name longer than 255 bytes: {env.method[:40]!r}...")
    return ENVELOPE.pack(env.flags, env.corr_session, env.corr_seq, len(m)) + m + env.body


def decode_envelope(b: bytes) -> RpcEnvelope:
    if len(b) < ENVELOPE.size:
        raise EnvelopeError("malformed envelope")
    flags, session, seq, mlen = ENVELOPE.unpack_from(b)
    end = ENVELOPE.size + mlen
    if end > len(b):
        raise EnvelopeError("malformed envelope")
    try:
        method = b[ENVELOPE.size:end].decode()
    except UnicodeDecodeError:
        raise EnvelopeError("malformed envelope") from None
    return RpcEnvelope(flags, session, seq, method, bytes(b[end:]))


class ResponseCache:
    """Bounded LRU of encoded responses keyed by request identity."""

    _BUSY = object()

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._items: OrderedDict[Hashable, object] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def begin(self, key: Hashable) -> tuple[str, bytes | None]:
        """``("new", None)`` claims the key; otherwise ``"busy"`` or ``("cached", response)``."""
        with self._lock:
            v = self._items.get(key)
            if v is None:
                self._items[key] = self._BUSY
                self._evict()
                return "new", None
            self._items.move_to_end(key)
            if v is self._BUSY:
                return "busy", None
            return "cached", v  # type: ignore[return-value]

    def put(self, key: Hashable, response: bytes) -> None:
        with self._lock:
            self._items[key] = response
            self._items.move_to_end(key)
            self._evict()

    def get(self, key: Hashable) -> bytes | None:
        with self._lock:
            v = self._items.get(key)
            return None if v is self._BUSY else v  # type: ignore[return-value]

    def _evict(self) -> None:
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)


class RpcNode:
    """RPC client and server on top of a GMP node driver.

    ``executor`` runs handlers off the GMP event loop; ``None`` runs them
    inline, which is what the deterministic simulator wants.
    """

    def __init__(self, node, executor: Executor | None = None, cache_size: int = 1024):
        self.node = node
        self.executor = executor
        self.cache = ResponseCache(cache_size)
        self.executions: Counter[tuple] = Counter()
        self._handlers: dict[str, Handler] = {}
        self._pending: dict[tuple, Future] = {}
        self._lock = threading.RLock()
        node.add_listener(self._on_event)

    @property
    def address(self):
        return self.node.address

    def register_handler(self, method: str, handler: Handler) -> None:
        if not method:
            raise ValueError("method must be nonempty")
        with self._lock:
            if method in self._handlers:
                raise DuplicateMethod(method)
            self._handlers[method] = handler

    # -- client ----------------------------------------------------------------

    def call(self, peer, method: str, body: bytes = b"", timeout: float = 5.0) -> Future:
        """Send a request; the future yields the response body.

        Fails with :class:`Timeout`, :class:`~octkit.gmp.PeerUnreachable` or
        :class:`RemoteError`.
        """
        if not method:
            raise ValueError("method must be nonempty")
        payload = encode_envelope(RpcEnvelope(0, 0, 0, method, body))
        fut: Future = Future()
        with self._lock:
            h = self.node.send(peer, payload)
            key = (peer, h.session_id, h.seq)
            self._pending[key] = fut
        h.future.add_done_callback(lambda f: self._on_request_resolved(key, f))
        self.node.call_later(timeout, lambda: self._expire(key, timeout))
        return fut

    def _on_request_resolved(self, key: tuple, f: Future) -> None:
        exc = f.exception()
        if exc is None:
            return
        fut = self._pending.pop(key, None)
        if fut is not None:
            fut.set_exception(exc if isinstance(exc, PeerUnreachable) else PeerUnreachable(str(exc)))

    def _expire(self, key: tuple, timeout: float) -> None:
        fut = self._pending.pop(key, None)
        if fut is not None:
            fut.set_exception(Timeout(f"no response from {key[0]!r} within {timeout:g}s"))

    def pending_calls(self) -> int:
        return len(self._pending)

    # -- server ----------------------------------------------------------------

    def _on_event(self, ev: ProtocolEvent) -> None:
        if type(ev) is not Deliver:
            return
        try:
            env = decode_envelope(ev.payload)
        except EnvelopeError as exc:
            self._respond(ev.peer, (ev.peer, ev.session_id, ev.seq), ev.session_id, ev.seq,
                          FLAG_ERROR, str(exc).encode())
            return
        if env.is_response:
            with self._lock:
                fut = self._pending.pop((ev.peer, env.corr_session, env.corr_seq), None)
            if fut is None:
                return  # late, duplicate or foreign: correlation must match exactly
            if env.is_error:
                fut.set_exception(RemoteError(env.body.decode(errors="replace")))
            else:
                fut.set_result(env.body)
            return
        self._dispatch(ev, env)

    def _dispatch(self, ev: Deliver, env: RpcEnvelope) -> None:
        ident = (ev.peer, ev.session_id, ev.seq)
        state, cached = self.cache.begin(ident)
        if state == "cached":
            self.node.send(ev.peer, cached)
            return
        if state == "busy":
            return
        handler = self._handlers.get(env.method)
        if handler is None:
            self._respond(ev.peer, ident, ev.session_id, ev.seq, FLAG_ERROR,
                          f"unknown method: {env.method}".encode())
            return
        self.executions[ident] += 1
        if self.executor is None:
            self._run(handler, env.body, ev.peer, ident)
        else:
            self.executor.submit(self._run, handler, env.body, ev.peer, ident)

    def _run(self, handler: Handler, body: bytes, peer, ident: tuple) -> None:
        try:
            result = handler(body)
        except Exception as exc:  # noqa: BLE001 - a failing handler must not kill the server
            log.debug("handler for %r failed", ident, exc_info=True)
            self._respond(peer, ident, ident[1], ident[2], FLAG_ERROR, _describe(exc))
            return
        if isinstance(result, Future):
            result.add_done_callback(lambda f: self._finish_async(f, peer, ident))
        else:
            self._respond(peer, ident, ident[1], ident[2], 0, bytes(result))

    def _finish_async(self, f: Future, peer, ident: tuple) -> None:
        exc = f.exception()
        if exc is not None:
            self._respond(peer, ident, ident[1], ident[2], FLAG_ERROR, _describe(exc))
        else:
            self._respond(peer, ident, ident[1], ident[2], 0, bytes(f.result()))

    def _respond(self, peer, ident: tuple, session: int, seq: int, flags: int, body: bytes) -> None:
        resp = encode_envelope(RpcEnvelope(FLAG_RESPONSE | flags, session, seq, "", body))
        self.cache.put(ident, resp)
        self.node.send(peer, resp)


def _describe(exc: BaseException) -> bytes:
    return f"{type(exc).__name__}: {exc}".encode()
