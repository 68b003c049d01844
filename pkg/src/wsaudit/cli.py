"""Command-line entry point: ``wsaudit scan|lab|poc``."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from dataclasses import dataclass
from typing import List, Optional, Sequence

from . import __version__
from .errors import WSAuditError
from .handshake import Header
from .lab import LabError, LabServer, matrix_profile, named_profile
from .poc import generate_cswh_poc
from .report import EXIT_ERROR, exit_code, render
from .scanner import DEFAULT_PROBE_ORIGIN, AuthzProbe, ScanConfig, TokenHeader, run_scan


@dataclass(frozen=True)
class CliInvocation:
    subcommand: str
    options: argparse.Namespace


def _cookie(text: str) -> Header:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"cookie must be NAME=VALUE, got {text!r}")
    return name.strip(), value.strip()


def _token_header(text: str) -> TokenHeader:
    name, sep, value = text.partition(":")
    if not name.strip():
        raise argparse.ArgumentTypeError("token header needs a name")
    return TokenHeader(name.strip(), value.strip() if sep else None)


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsaudit", description="Audit WebSocket endpoints for handshake-level weaknesses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="{scan,lab,poc}")

    scan = sub.add_parser("scan", help="probe a ws:// or wss:// endpoint")
    scan.add_argument("url")
    scan.add_argument("--origin", action="append", default=[], metavar="O",
                      help=f"probe origin (repeatable; default {DEFAULT_PROBE_ORIGIN})")
    scan.add_argument("--cookie", action="append", default=[], type=_cookie, metavar="N=V")
    scan.add_argument("--token-header", type=_token_header, metavar="NAME[:VALUE]")
    scan.add_argument("--timeout-ms", type=_positive, default=10_000, metavar="N")
    scan.add_argument("--format", choices=["text", "json"], default="text")
    scan.add_argument("--insecure-skip-tls-verify", action="store_true")
    scan.add_argument("--parallel", type=_positive, default=1, metavar="N")
    scan.add_argument("--authz-probe", action="append", default=[], metavar="FILE",
                      help="JSON file with one probe object or a list of them")
    scan.add_argument("--verbose", action="store_true",
                      help="print full evidence and handshake transcripts")

    lab = sub.add_parser("lab", help="run the ground-truth lab server")
    lab.add_argument("--profile", choices=["vulnerable", "hardened"], default="vulnerable")
    lab.add_argument("--matrix-index", type=int, choices=range(32), metavar="0..31")
    lab.add_argument("--port", type=int, default=0, metavar="N")
    lab.add_argument("--host", default="127.0.0.1")

    poc = sub.add_parser("poc", help="write a CSWH proof-of-concept page")
    poc.add_argument("url")
    poc.add_argument("--out", metavar="FILE")
    poc.add_argument("--note", default="")
    return parser


def parse_cli(argv: Optional[Sequence[str]] = None) -> CliInvocation:
    options = build_parser().parse_args(argv)
    return CliInvocation(options.subcommand, options)


def load_authz_probes(path: str) -> List[AuthzProbe]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    items = doc if isinstance(doc, list) else [doc]
    probes = []
    for item in items:
        probes.append(AuthzProbe(
            name=item.get("name", path),
            baseline_cookies=tuple(_cookie(c) for c in item.get("baseline_cookies", [])),
            probe_cookies=tuple(_cookie(c) for c in item.get("probe_cookies", [])),
            message=item["message"].encode("utf-8"),
            success_pattern=item["success_pattern"].encode("utf-8"),
        ))
    return probes


def config_from_options(opts: argparse.Namespace) -> ScanConfig:
    probes = []
    for path in opts.authz_probe:
        probes.extend(load_authz_probes(path))
    return ScanConfig(
        target=opts.url,
        probe_origins=opts.origin or [DEFAULT_PROBE_ORIGIN],
        cookies=list(opts.cookie),
        token_header=opts.token_header,
        timeout_ms=opts.timeout_ms,
        authz_probes=probes,
        verify_tls=not opts.insecure_skip_tls_verify,
        parallel=opts.parallel,
    )


def cmd_scan(opts: argparse.Namespace) -> int:
    try:
        config = config_from_options(opts)
    except (WSAuditError, OSError, ValueError, KeyError) as exc:
        print(f"wsaudit scan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = run_scan(config)
    sys.stdout.write(render(report, opts.format, verbose=opts.verbose))
    return exit_code(report)


def cmd_lab(opts: argparse.Namespace) -> int:
    if opts.matrix_index is not None:
        profile, name = matrix_profile(opts.matrix_index), f"matrix-{opts.matrix_index}"
    else:
        profile, name = named_profile(opts.profile), opts.profile
    try:
        server = LabServer(profile, host=opts.host, port=opts.port).start()
    except LabError as exc:
        print(f"wsaudit lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    session = server.issue_session()
    lines = {
        "profile": name,
        "settings": profile.describe(),
        "address": f"{server.host}:{server.port}",
        "url": server.url,
        "origin": server.origin,
        "cookie": session.cookie,
        "token_header": profile.token_header_name,
        "token": session.token,
        "ready": "1",
    }
    for key, value in lines.items():
        print(f"{key}={value}", flush=True)

    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    try:
        done.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_poc(opts: argparse.Namespace) -> int:
    try:
        page = generate_cswh_poc(opts.url, opts.note)
    except WSAuditError as exc:
        print(f"wsaudit poc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if opts.out:
        with open(opts.out, "w", encoding="utf-8") as fh:
            fh.write(page)
        print(f"wrote {opts.out}")
    else:
        sys.stdout.write(page)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    invocation = parse_cli(argv)
    logging.basicConfig(level=invocation.options.log_level,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"scan": cmd_scan, "lab": cmd_lab, "poc": cmd_poc}[invocation.subcommand]
    return handler(invocation.options)


if __name__ == "__main__":
    sys.exit(main())
