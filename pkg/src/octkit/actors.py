"""Generator-based actors driven by future completion.

An actor is a generator that yields a :class:`~concurrent.futures.Future` (or a
list of them) and is resumed with the result once it resolves.  Nothing here
knows about time; inside a :class:`~octkit.netsim.SimNet` futures resolve as
simulated events fire, which keeps whole distributed workflows deterministic.
"""

from __future__ import annotations

from collections.abc import Generator, Iterable
from concurrent.futures import Future


def resolved(value=None) -> Future:
    f: Future = Future()
    f.set_result(value)
    return f


def gather(futures: Iterable[Future]) -> Future:
    """Future of the list of results; fails with the first exception (in order)."""
    futures = list(futures)
    out: Future = Future()
    if not futures:
        out.set_result([])
        return out
    remaining = [len(futures)]

    def done(_):
        remaining[0] -= 1
        if remaining[0]:
            return
        for f in futures:
            exc = f.exception()
            if exc is not None:
                out.set_exception(exc)
                return
        out.set_result([f.result() for f in futures])

    for f in futures:
        f.add_done_callback(done)
    return out


def spawn(gen: Generator) -> Future:
    """Run ``gen`` until it returns; the returned future carries its value."""
    out: Future = Future()

    def step(value=None, exc: BaseException | None = None):
        while True:
            try:
                y = gen.throw(exc) if exc is not None else gen.send(value)
            except StopIteration as stop:
                out.set_result(stop.value)
                return
            except BaseException as e:  # noqa: BLE001 - surfaced through the future
                out.set_exception(e)
                return
            fut = gather(y) if isinstance(y, (list, tuple)) else y
            if not fut.done():
                fut.add_done_callback(lambda f: step(*_outcome(f)))
                return
            value, exc = _outcome(fut)

    step()
    return out


def _outcome(f: Future):
    exc = f.exception()
    return (None, exc) if exc is not None else (f.result(), None)
