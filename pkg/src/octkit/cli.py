"""``octkit``: one entry point for generation, benchmarks and diagnostics.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification
mismatch.  Data goes to ``--out`` (or stdout); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .executor import (BenchConfig, ExecutorError, run_distributed, simbench, simbench_report, spread_workers,
                       timing_report)
from .gmp import PeerUnreachable
from .malgen import (DEFAULT_PERIOD_START, GenConfig, format_records, generate_records, read_records, split,
                     split_bytes)
from .malstone import DEFAULT_WINDOW, RatioTable, run_oracle
from .monitor import (InsufficientSamples, MetricsStore, SampleError, aggregate_link_throughput,
                      detect_underperformers, parse_samples, status_report)
from .netsim import Scenario, load_scenario

log = logging.getLogger("octkit")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_MISMATCH = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- parser ----------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, help="RNG seed (default: the scenario's seed, else 0)")
    g.add_argument("--config", metavar="FILE", help="key = value file supplying defaults for this command's flags")
    g.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    g.add_argument("--format", choices=("csv", "text"), default="csv", help="report format (default: csv)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="octkit", description="GMP messaging, network simulation and the MalStone benchmark.")
    parser.add_argument("--version", action="version", version=f"octkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("malgen", parents=[common], help="generate a MalStone record file")
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--entities", type=int, required=True)
    p.add_argument("--sites", type=int, required=True)
    p.add_argument("--malicious-fraction", type=float, default=0.01)
    p.add_argument("--p-compromise", type=float, default=0.2)
    p.add_argument("--zipf", type=float, default=1.0, help="site popularity exponent")
    p.add_argument("--period-start", type=int, default=DEFAULT_PERIOD_START, help="epoch seconds")
    p.add_argument("--period-days", type=float, default=56)
    p.add_argument("--split", type=int, metavar="K", help="also write K round-robin partitions next to --out")

    p = sub.add_parser("malstone", parents=[common], help="compute MalStone-A or MalStone-B ratios")
    p.add_argument("--input", nargs="+", required=True, metavar="FILE", help="record files (concatenated)")
    p.add_argument("--mode", type=str.upper, choices=("A", "B"), default="A")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="MalStone-B window width in seconds")
    p.add_argument("--origin", type=int, default=DEFAULT_PERIOD_START, help="MalStone-B window origin (epoch s)")
    p.add_argument("--engine", choices=("distributed", "oracle"), default="distributed")
    p.add_argument("--verify", action="store_true", help="compare with the single-pass oracle; exit 3 on mismatch")
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--scenario", default="oct4", help="built-in scenario name or scenario file")
    p.add_argument("--loss", type=float, help="override the loss probability of every link")
    p.add_argument("--policy", choices=("naive", "balanced"), default="balanced")
    p.add_argument("--timing", metavar="PATH", help="write the timing CSV of a distributed run")

    p = sub.add_parser("gmp-ping", parents=[common], help="measure GMP message round trips")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--size", type=int, default=100, help="payload bytes")
    p.add_argument("--scenario", default="oct4")
    p.add_argument("--loss", type=float)
    p.add_argument("--src")
    p.add_argument("--dst")
    p.add_argument("--udp", action="store_true", help="use real UDP sockets on loopback instead of the simulator")

    p = sub.add_parser("simbench", parents=[common], help="local versus distributed MalStone (wide-area penalty)")
    p.add_argument("--records", type=int, default=200_000)
    p.add_argument("--entities", type=int, default=20_000)
    p.add_argument("--sites", type=int, default=2_000)
    p.add_argument("--partitions", type=int, default=28)
    p.add_argument("--per-rack", type=int, default=7, help="workers per rack in the distributed layout")
    p.add_argument("--replicas", type=int, default=3)
    p.add_argument("--mode", type=str.upper, choices=("A", "B"), default="A")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--local-scenario", default="local28")
    p.add_argument("--scenario", default="oct4-constrained")
    p.add_argument("--compute-rate", type=float, default=50_000.0, help="records/s per worker; 0 makes compute free")

    p = sub.add_parser("monitor-report", parents=[common], help="node and link status report")
    p.add_argument("--samples", required=True, metavar="FILE", help="metrics samples (node,at,cpu,mem,disk,in,out)")
    p.add_argument("--traffic", metavar="FILE", help="traffic matrix CSV: src,dst,bytes_per_s")
    p.add_argument("--scenario", default="oct4")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Load ``--config`` defaults into the chosen subcommand's parser."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    sub = _subparsers(parser).get(command)
    if sub is None:
        return
    path = Path(known.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"--config {path}: {exc.strerror or exc}") from None
    dests = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        action = dests.get(dest)
        if action is None or dest in ("config", "help"):
            raise UsageError(f"{path}:{lineno}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes", "on")
        elif action.nargs == "+":
            defaults[dest] = value.split()
        else:
            conv = action.type or str
            try:
                defaults[dest] = conv(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
        action.required = False
    sub.set_defaults(**defaults)


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return dict(a.choices)
    return {}


# -- output helpers --------------------------------------------------------------


def _config_comments(args: argparse.Namespace, scenario: Scenario | None = None) -> list[str]:
    skip = {"out", "verbose", "func"}
    lines = [f"octkit {args.command}"]
    for k, v in sorted(vars(args).items()):
        if k in skip or k == "command":
            continue
        if isinstance(v, list):
            v = " ".join(map(str, v))
        lines.append(f"{k}={v}")
    if scenario is not None:
        for line in scenario.to_config().splitlines():
            k, v = (s.strip() for s in line.split("=", 1))
            lines.append(f"scenario.{k}={v}")
    return lines


def _render(text: str, fmt: str) -> str:
    """CSV (with ``#`` comment lines) to aligned text when ``fmt`` is text."""
    if fmt == "csv":
        return text
    comments = [ln for ln in text.splitlines() if ln.startswith("#")]
    rows = list(csv.reader(ln for ln in text.splitlines() if ln and not ln.startswith("#")))
    if not rows:
        return text
    widths = [max(len(r[i]) if i < len(r) else 0 for r in rows) for i in range(len(rows[0]))]
    body = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(comments + body) + "\n"


def _emit(args: argparse.Namespace, text: str) -> None:
    text = _render(text, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _scenario(args: argparse.Namespace, name: str | None = None) -> Scenario:
    sc = load_scenario(name or args.scenario)
    if args.seed is None:
        args.seed = sc.seed
    else:
        sc = sc.with_(seed=args.seed)
    loss = getattr(args, "loss", None)
    if loss is not None:
        sc = sc.with_(intra_loss=loss, inter_loss=loss)
    return sc


# -- commands --------------------------------------------------------------------


def cmd_malgen(args: argparse.Namespace) -> int:
    args.seed = args.seed or 0
    cfg = GenConfig(args.records, args.entities, args.sites, args.malicious_fraction, args.p_compromise,
                    args.zipf, args.period_start, args.period_days, args.seed)
    data = format_records(generate_records(cfg))
    if args.out:
        Path(args.out).write_bytes(data)
        if args.split:
            for p in split(args.out, args.split):
                log.info("wrote %s", p)
    else:
        if args.split:
            raise UsageError("--split needs --out")
        sys.stdout.buffer.write(data)
    log.info("%d records, %d bytes", args.records, len(data))
    return EXIT_OK


def _read_inputs(paths: Sequence[str]) -> bytes:
    chunks = []
    for p in paths:
        data = Path(p).read_bytes()
        read_records(data, context=p)  # validate with file context before anything runs
        chunks.append(data)
    return b"".join(chunks)


def cmd_malstone(args: argparse.Namespace) -> int:
    data = _read_inputs(args.input)
    records = read_records(data)
    sc = None
    if args.engine == "oracle":
        table = run_oracle(records, args.mode, args.window, args.origin)
    else:
        sc = _scenario(args)
        workers = spread_workers(sc, args.workers)
        cfg = BenchConfig(mode=args.mode, window_width=args.window, window_origin=args.origin,
                          source_policy=args.policy, seed=args.seed)
        net = sc.build(keep_transcript=False)
        run = run_distributed(cfg, split_bytes(data, len(workers)), net, workers, capacities=sc.capacities())
        table = run.table
        log.info("distributed run: %.6f s virtual, transcript %s", run.total_time, net.transcript_hash()[:16])
        if args.timing:
            Path(args.timing).write_text(timing_report(run, comments=_config_comments(args, sc)))
    _emit(args, table.to_csv(_config_comments(args, sc)))
    if args.verify:
        oracle = run_oracle(records, args.mode, args.window, args.origin)
        if oracle.counts != table.counts:
            _report_mismatch(oracle, table)
            return EXIT_MISMATCH
        log.info("verify: %d keys match the oracle", len(oracle))
    return EXIT_OK


def _report_mismatch(want: RatioTable, got: RatioTable, limit: int = 10) -> None:
    keys = sorted(set(want.keys()) | set(got.keys()))
    bad = [k for k in keys if want.counts.get(k) != got.counts.get(k)]
    print(f"octkit: verify: {len(bad)} of {len(keys)} keys differ from the oracle", file=sys.stderr)
    for k in bad[:limit]:
        print(f"  {k}: oracle={want.counts.get(k)} got={got.counts.get(k)}", file=sys.stderr)


def cmd_gmp_ping(args: argparse.Namespace) -> int:
    if args.count < 1 or args.size < 0:
        raise UsageError("--count must be >= 1 and --size >= 0")
    payload = bytes(args.size)
    if args.udp:
        args.seed = args.seed or 0
        rows = _ping_udp(args.count, payload)
        comments = _config_comments(args)
    else:
        sc = _scenario(args)
        rows = _ping_sim(sc, args, payload)
        comments = _config_comments(args, sc)
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seq", "size", "rtt_ms", "status"])
    w.writerows(rows)
    _emit(args, buf.getvalue())
    return EXIT_OK if all(r[3] == "acked" for r in rows) else EXIT_RUNTIME


def _ping_sim(sc: Scenario, args: argparse.Namespace, payload: bytes) -> list[list]:
    from .node import SimGmpNode

    nodes = sc.nodes()
    src = args.src or nodes[0]
    dst = args.dst or nodes[-1]
    net = sc.build()
    a, _b = SimGmpNode(net, src), SimGmpNode(net, dst)
    rows = []
    for i in range(args.count):
        t0 = net.now
        h = a.send(dst, payload)
        net.run(until=h.future.done)
        ok = h.future.done() and h.future.exception() is None
        rows.append([i + 1, len(payload), f"{(net.now - t0) * 1e3:.6f}", "acked" if ok else "failed"])
    return rows


def _ping_udp(count: int, payload: bytes) -> list[list]:
    from .node import UdpGmpNode

    rows = []
    with UdpGmpNode() as a, UdpGmpNode() as b:
        for i in range(count):
            t0 = time.monotonic()
            h = a.send(b.address, payload)
            try:
                h.future.result(timeout=30)
                status = "acked"
            except (PeerUnreachable, TimeoutError):
                status = "failed"
            rows.append([i + 1, len(payload), f"{(time.monotonic() - t0) * 1e3:.3f}", status])
    return rows


def cmd_simbench(args: argparse.Namespace) -> int:
    local, dist = _scenario(args, args.local_scenario), _scenario(args)
    cfg = GenConfig(args.records, args.entities, args.sites, seed=args.seed)
    data = format_records(generate_records(cfg))
    parts = split_bytes(data, args.partitions)
    res = simbench(parts, local, dist, per_rack=args.per_rack, replicas=args.replicas, mode=args.mode,
                   window_width=args.window, compute_rate=args.compute_rate, seed=args.seed)
    comments = _config_comments(args, dist)
    comments += [f"local_scenario.{ln.replace(' = ', '=')}" for ln in local.to_config().splitlines()]
    _emit(args, simbench_report(res, comments))
    return EXIT_OK


def cmd_monitor_report(args: argparse.Namespace) -> int:
    sc = _scenario(args)
    topo = sc.topology()
    store = MetricsStore.for_topology(topo)
    for s in parse_samples(Path(args.samples).read_text()):
        store.ingest_sample(s)
    report = None
    if args.traffic:
        tm: dict[tuple[str, str], float] = {}
        for lineno, row in enumerate(csv.reader(Path(args.traffic).read_text().splitlines()), 1):
            if not row or row[0].startswith("#") or row[0] == "src":
                continue
            if len(row) != 3:
                raise SampleError(f"{args.traffic}:{lineno}: expected src,dst,bytes_per_s")
            tm[(row[0], row[1])] = tm.get((row[0], row[1]), 0.0) + float(row[2])
        report = aggregate_link_throughput(topo, tm)
    try:
        flagged = sorted(detect_underperformers(store, args.window, args.threshold))
        note = f"underperformers={','.join(flagged) or '-'}"
    except InsufficientSamples as exc:
        note = f"underperformers=unknown ({exc})"
    text = status_report(store, topo, report, sc.capacities(), fmt="csv")
    comments = "".join(f"# {c}\n" for c in [*_config_comments(args, sc), note])
    _emit(args, comments + text)
    return EXIT_OK


COMMANDS = {
    "malgen": cmd_malgen,
    "malstone": cmd_malstone,
    "gmp-ping": cmd_gmp_ping,
    "simbench": cmd_simbench,
    "monitor-report": cmd_monitor_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "octkit: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="octkit: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (OSError, ValueError, LookupError, ExecutorError, PeerUnreachable, TimeoutError) as exc:
        print(f"octkit: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
