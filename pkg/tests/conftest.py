import pytest

from octkit.gmp import Endpoint, GmpConfig


class Wire:
    """Two sans-IO endpoints joined by a hand-driven wire with a manual clock."""

    def __init__(self, a_session=7, b_session=9, config=None):
        cfg = config or GmpConfig()
        self.a = Endpoint(cfg, a_session)
        self.b = Endpoint(cfg, b_session)
        self.now = 0.0
        self.events = {"a": [], "b": []}

    def pump(self, drop=lambda src, data: False):
        """Deliver every queued datagram (both ways) until both outboxes are empty."""
        moved = 0
        while self.a.outbox or self.b.outbox:
            for src, ep, other, name in ((("a", self.a, self.b, "b")), ("b", self.b, self.a, "a")):
                for _peer, data in ep.drain():
                    moved += 1
                    if drop(src, data):
                        continue
                    self.events[name] += other.handle_datagram(src, data, self.now)
        return moved

    def tick(self, to):
        self.now = to
        self.events["a"] += self.a.handle_timer(to)
        self.events["b"] += self.b.handle_timer(to)


@pytest.fixture
def wire():
    return Wire()


# -- acceptance reporting ----------------------------------------------------------

CRITERIA = {
    1: "exactly-once delivery under 10% loss",
    2: "session restart redelivery and stale suppression",
    3: "10 MiB chunked transfer under 5% loss",
    4: "RPC at-most-once under 10% loss",
    5: "distributed MalStone equals oracle at 10^6 records",
    6: "MalStone-B last window equals MalStone-A",
    7: "wide-area penalty ordering naive > balanced >= 0",
    8: "link aggregation equals brute-force path sums",
    9: "MalGen record file format",
    10: "simulator determinism",
}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(mark.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        got = _outcomes.get(n)
        status = "NOT RUN" if got is None else "PASS" if all(got) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {title}")
