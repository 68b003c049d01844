"""
Check catalog run against a live WebSocket endpoint.

Every check speaks to the target through fresh connections and reports
what it saw as :class:`Finding` objects whose evidence lines are copied
verbatim from the captured handshake transcripts.

Severity mapping (the source material ranks nothing, so this is ours):

==========================  ========
cswh, authz-bypass          critical
origin-not-enforced         high
missing-token               high
unencrypted-transport       high
everything else             medium
==========================  ========
"""

from __future__ import annotations

import datetime
import enum
import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from urllib.parse import urlsplit

from .client import HandshakeResult, WebSocketConnection, connect, open_handshake
from .errors import HandshakeParseError, InputError, TransportError, WSAuditError
from .handshake import GUID, Header, compute_accept, generate_nonce
from .origin import DEFAULT_PORTS, OriginTriple, parse_origin, same_origin

log = logging.getLogger(__name__)

DEFAULT_PROBE_ORIGIN = "https://attacker.example"
DEFAULT_TIMEOUT_MS = 10_000
ECHO_MARKER = "wsaudit-echo-probe"


class CheckId(str, enum.Enum):
    UNENCRYPTED_TRANSPORT = "unencrypted-transport"
    ORIGIN_NOT_ENFORCED = "origin-not-enforced"
    WILDCARD_ORIGIN = "wildcard-origin"
    COOKIE_ONLY_AUTH = "cookie-only-auth"
    CSWH = "cswh"
    MISSING_TOKEN = "missing-token"
    BAD_ACCEPT = "bad-accept"
    STATIC_ACCEPT = "static-accept"
    AUTHZ_BYPASS = "authz-bypass"

    @property
    def order(self) -> int:
        return list(CheckId).index(self)


class Severity(str, enum.Enum):
    INFO = "info"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"

    @property
    def rank(self) -> int:
        return list(Severity).index(self)


class CheckStatus(str, enum.Enum):
    RAN = "ran"
    SKIPPED = "skipped"
    INCONCLUSIVE = "inconclusive"


SEVERITY = {
    CheckId.UNENCRYPTED_TRANSPORT: Severity.HIGH,
    CheckId.ORIGIN_NOT_ENFORCED: Severity.HIGH,
    CheckId.WILDCARD_ORIGIN: Severity.MEDIUM,
    CheckId.COOKIE_ONLY_AUTH: Severity.MEDIUM,
    CheckId.CSWH: Severity.CRITICAL,
    CheckId.MISSING_TOKEN: Severity.HIGH,
    CheckId.BAD_ACCEPT: Severity.MEDIUM,
    CheckId.STATIC_ACCEPT: Severity.MEDIUM,
    CheckId.AUTHZ_BYPASS: Severity.CRITICAL,
}

REMEDIATION = {
    CheckId.UNENCRYPTED_TRANSPORT:
        "Serve the endpoint over wss:// (TLS, port 443) so traffic cannot be read "
        "or altered by a man in the middle; retire the plain ws:// listener.",
    CheckId.ORIGIN_NOT_ENFORCED:
        "Check the Origin header during the handshake against an explicit list of "
        "trusted origins and refuse the upgrade for anything else.",
    CheckId.WILDCARD_ORIGIN:
        "Replace the '*' origin rule with an allowlist of the exact "
        "scheme/host/port origins that may connect.",
    CheckId.COOKIE_ONLY_AUTH:
        "Do not rely on ambient cookies alone: demand a per-connection secret "
        "(CSRF token) in the handshake in addition to the session cookie.",
    CheckId.CSWH:
        "Validate Origin against an allowlist and require an unguessable, "
        "single-use token bound to the session before upgrading.",
    CheckId.MISSING_TOKEN:
        "Generate a random token server-side, send it to the legitimate page, "
        "and refuse handshakes that do not present a valid, unused token.",
    CheckId.BAD_ACCEPT:
        "Compute Sec-WebSocket-Accept as base64(SHA-1(key + "
        "258EAFA5-E914-47DA-95CA-C5AB0DC85B11)) for every request.",
    CheckId.STATIC_ACCEPT:
        "Remove hard-coded test accept values; derive the accept header from "
        "each request's Sec-WebSocket-Key.",
    CheckId.AUTHZ_BYPASS:
        "Authorize every message server-side against the identity bound to the "
        "connection, not just at handshake time.",
}

CHECK_IDS = {
    "encryption": (CheckId.UNENCRYPTED_TRANSPORT,),
    "origin": (CheckId.ORIGIN_NOT_ENFORCED, CheckId.WILDCARD_ORIGIN),
    "cookie_auth": (CheckId.COOKIE_ONLY_AUTH,),
    "cswh": (CheckId.CSWH,),
    "token": (CheckId.MISSING_TOKEN,),
    "accept": (CheckId.BAD_ACCEPT, CheckId.STATIC_ACCEPT),
    "authz": (CheckId.AUTHZ_BYPASS,),
}


class Inconclusive(WSAuditError):
    """A check could not reach a verdict (precondition not met on the target)."""


@dataclass(frozen=True)
class Finding:
    check_id: CheckId
    evidence: Tuple[str, ...]
    detail: str = ""
    severity: Severity = None  # type: ignore[assignment]
    remediation: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "check_id", CheckId(self.check_id))
        if self.severity is None:
            object.__setattr__(self, "severity", SEVERITY[self.check_id])
        else:
            object.__setattr__(self, "severity", Severity(self.severity))
        if not self.remediation:
            object.__setattr__(self, "remediation", REMEDIATION[self.check_id])
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if not self.evidence:
            raise InputError("a finding needs at least one evidence line")


@dataclass(frozen=True)
class TokenHeader:
    """Name of the anti-CSRF header plus where its value comes from.

    ``provider`` (called with the cookies of the handshake) wins over a
    static ``value``; with neither, only the stripped-token probe runs.
    """

    name: str
    value: Optional[str] = None
    provider: Optional[Callable[[Sequence[Header]], Optional[str]]] = None

    def fresh(self, cookies: Sequence[Header]) -> Optional[str]:
        if self.provider is not None:
            return self.provider(cookies)
        return self.value


@dataclass(frozen=True)
class AuthzProbe:
    name: str
    baseline_cookies: Tuple[Header, ...]
    probe_cookies: Tuple[Header, ...]
    message: bytes
    success_pattern: bytes

    def __post_init__(self) -> None:
        if not self.message or not self.success_pattern:
            raise InputError("authz probe needs a non-empty message and success pattern")


@dataclass
class ScanConfig:
    target: str
    probe_origins: List[str] = field(default_factory=lambda: [DEFAULT_PROBE_ORIGIN])
    cookies: List[Header] = field(default_factory=list)
    token_header: Optional[TokenHeader] = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    authz_probes: List[AuthzProbe] = field(default_factory=list)
    verify_tls: bool = True
    parallel: int = 1
    random_origins: int = 1
    seed: Optional[str] = None
    magic: str = GUID
    entropy: Callable[[int], bytes] = os.urandom

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise InputError("timeout must be positive")
        if self.parallel < 1:
            raise InputError("parallelism must be at least 1")
        parts = urlsplit(self.target)
        if parts.scheme.lower() not in ("ws", "wss") or not parts.hostname:
            raise InputError(f"target must be a ws:// or wss:// URL: {self.target!r}")

    @property
    def timeout(self) -> float:
        return self.timeout_ms / 1000.0


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class ScanReport:
    target: str
    started_at: str = ""
    finished_at: str = ""
    findings: List[Finding] = field(default_factory=list)
    checks_run: Dict[CheckId, CheckStatus] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)
    transcripts: List[str] = field(default_factory=list, compare=False, repr=False)

    @property
    def check_ids(self) -> List[CheckId]:
        return [f.check_id for f in self.findings]


def own_origin(target: str) -> str:
    """The web origin a legitimate page serving ``target`` would have."""
    parts = urlsplit(target)
    scheme = "https" if parts.scheme.lower() == "wss" else "http"
    host = (parts.hostname or "").lower()
    if ":" in host:
        host = f"[{host}]"
    if parts.port is not None and parts.port != DEFAULT_PORTS[scheme]:
        return f"{scheme}://{host}:{parts.port}"
    return f"{scheme}://{host}"


def _is_foreign(origin: str, own: OriginTriple) -> bool:
    try:
        return not same_origin(parse_origin(origin), own).same
    except WSAuditError:
        return True


class Scanner:
    """Runs the check catalog for one :class:`ScanConfig`."""

    def __init__(self, config: ScanConfig) -> None:
        self.config = config
        self.own_origin = own_origin(config.target)
        self.transcripts: List[str] = []

    # -- plumbing ------------------------------------------------------

    def _handshake(self, origin: Optional[str], cookies: Sequence[Header] = (),
                   with_token: bool = False, token: Optional[str] = None,
                   keep_open: bool = False) -> HandshakeResult:
        token_header = None
        th = self.config.token_header
        if th is not None and (with_token or token is not None):
            value = token if token is not None else th.fresh(cookies)
            if value is not None:
                token_header = (th.name, value)
        result = open_handshake(
            self.config.target,
            origin=origin,
            cookies=cookies,
            token_header=token_header,
            nonce=generate_nonce(self.config.entropy),
            timeout=self.config.timeout,
            verify_tls=self.config.verify_tls,
            magic=self.config.magic,
            keep_open=keep_open,
        )
        self.transcripts.append(result.transcript)
        return result

    def _exchange(self, conn: WebSocketConnection, message) -> Optional[bytes]:
        """Send one message and return the first reply's bytes (None on silence)."""
        try:
            conn.send(message)
            reply = conn.recv_message(self.config.timeout)
        finally:
            conn.close()
        if reply is None:
            return None
        self.transcripts.append(reply.data.decode("utf-8", errors="replace"))
        return reply.data

    @staticmethod
    def _lines(result: HandshakeResult, *names: str) -> List[str]:
        lines = [result.request_start_line]
        for name in names:
            line = result.request_line(name)
            if line is not None:
                lines.append(line)
        lines.append(result.status_line)
        return lines

    def _random_origins(self) -> List[str]:
        rng = random.Random(self.config.seed if self.config.seed is not None
                            else self.config.target)
        return [f"https://{rng.getrandbits(48):012x}.wsaudit-probe.example"
                for _ in range(self.config.random_origins)]

    def _foreign_origin(self) -> str:
        own = parse_origin(self.own_origin)
        for origin in self.config.probe_origins:
            if _is_foreign(origin, own):
                return origin
        return DEFAULT_PROBE_ORIGIN

    def _cookie_gated(self, origin: str) -> Tuple[bool, List[str]]:
        """Does dropping the cookies change the outcome of the handshake?

        True if the cookie-less handshake is refused, or accepted but the
        echo probe answers differently than with cookies.
        """
        cookies = self.config.cookies
        bare = self._handshake(origin, (), keep_open=True)
        evidence = self._lines(bare, "Origin")
        if not bare.switched:
            return True, evidence
        bare_reply = self._exchange(bare.connection, ECHO_MARKER)
        full = self._handshake(origin, cookies, keep_open=True)
        if not full.switched:
            return True, evidence
        full_reply = self._exchange(full.connection, ECHO_MARKER)
        if bare_reply != full_reply:
            for reply in (bare_reply, full_reply):
                if reply is not None:
                    evidence.append(reply.decode("utf-8", errors="replace"))
            return True, evidence
        return False, evidence

    # -- checks --------------------------------------------------------

    def check_encryption(self) -> Optional[Finding]:
        if urlsplit(self.config.target).scheme.lower() != "ws":
            return None
        return Finding(
            CheckId.UNENCRYPTED_TRANSPORT,
            evidence=(self.config.target,),
            detail="target uses the plain ws:// scheme; traffic is readable on the path",
        )

    def check_origin_enforcement(self) -> List[Finding]:
        own = parse_origin(self.own_origin)
        foreign = [o for o in self.config.probe_origins if _is_foreign(o, own)]
        randoms = self._random_origins()
        tested = foreign + randoms
        cookies = self.config.cookies

        def probe(origin: str) -> HandshakeResult:
            return self._handshake(origin, cookies, with_token=True)

        if self.config.parallel > 1 and len(tested) > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallel) as pool:
                results = list(pool.map(probe, tested))
        else:
            results = [probe(o) for o in tested]

        findings = []
        accepted = [r for r in results[:len(foreign)] if r.switched]
        if accepted:
            evidence = [line for r in accepted for line in self._lines(r, "Origin")]
            findings.append(Finding(
                CheckId.ORIGIN_NOT_ENFORCED, evidence,
                detail="handshake accepted from foreign origin(s): "
                       + ", ".join(r.request.origin for r in accepted),
            ))
        if randoms and results and all(r.switched for r in results):
            evidence = [line for r in results for line in self._lines(r, "Origin")]
            findings.append(Finding(
                CheckId.WILDCARD_ORIGIN, evidence,
                detail=f"all {len(results)} tested origins accepted, including "
                       "never-before-seen random ones",
            ))
        return findings

    def check_cookie_auth(self) -> Optional[Finding]:
        cookies = self.config.cookies
        with_cookies = self._handshake(self.own_origin, cookies)
        if not with_cookies.switched:
            return None
        gated, gate_evidence = self._cookie_gated(self.own_origin)
        if not gated:
            return None
        return Finding(
            CheckId.COOKIE_ONLY_AUTH,
            self._lines(with_cookies, "Cookie") + gate_evidence,
            detail="the session cookie alone opens the socket; no token is demanded",
        )

    def check_cswh(self) -> Optional[Finding]:
        origin = self._foreign_origin()
        cookies = self.config.cookies
        full = self._handshake(origin, cookies, with_token=True)
        if not full.switched:
            return None
        stripped = self._handshake(origin, cookies)
        if not stripped.switched:
            return None
        gated, gate_evidence = self._cookie_gated(origin)
        if not gated:
            return None
        return Finding(
            CheckId.CSWH,
            self._lines(full, "Origin", "Cookie") + self._lines(stripped, "Origin", "Cookie")
            + gate_evidence,
            detail=f"a page on {origin} can open an authenticated socket by riding the "
                   "victim's cookies; neither Origin nor a token is checked",
        )

    def check_token_mitigation(self) -> Optional[Finding]:
        th = self.config.token_header
        cookies = self.config.cookies
        stripped = self._handshake(self.own_origin, cookies)
        if not stripped.switched:
            return None
        evidence = self._lines(stripped, "Cookie")
        detail = f"handshake without the {th.name} header was accepted"
        token = th.fresh(cookies)
        if token is not None:
            first = self._handshake(self.own_origin, cookies, token=token)
            if first.switched:
                replay = self._handshake(self.own_origin, cookies, token=token)
                if replay.switched:
                    evidence += self._lines(replay, "Cookie")
                    detail += "; replayable-token: an already used token was accepted again"
        return Finding(CheckId.MISSING_TOKEN, evidence, detail=detail)

    def check_accept_computation(self) -> List[Finding]:
        cookies = self.config.cookies
        first = self._handshake(self.own_origin, cookies, with_token=True)
        second = self._handshake(self.own_origin, cookies, with_token=True)
        while second.nonce == first.nonce:
            second = self._handshake(self.own_origin, cookies, with_token=True)
        if not (first.switched and second.switched):
            raise Inconclusive("accept check: the target refused the credentialed handshake ("
                               f"{first.status_line} / {second.status_line})")
        a1, a2 = first.response.accept, second.response.accept
        evidence = []
        for r in (first, second):
            line = r.response_line("Sec-WebSocket-Accept")
            evidence += [r.status_line] + ([line] if line else [])
        findings = []
        if a1 != compute_accept(first.nonce.encoded, self.config.magic):
            findings.append(Finding(
                CheckId.BAD_ACCEPT, evidence,
                detail="Sec-WebSocket-Accept is missing or not base64(SHA-1(key + GUID))",
            ))
        if a1 is not None and a1 == a2:
            findings.append(Finding(
                CheckId.STATIC_ACCEPT, evidence,
                detail="two different keys produced the same accept value",
            ))
        return findings

    def replay_authz_probe(self, probe: AuthzProbe) -> Optional[Finding]:
        baseline = self._handshake(self.own_origin, probe.baseline_cookies,
                                   with_token=True, keep_open=True)
        attacker = self._handshake(self.own_origin, probe.probe_cookies,
                                   with_token=True, keep_open=True)
        if not (baseline.switched and attacker.switched):
            for r in (baseline, attacker):
                if r.connection is not None:
                    r.connection.close()
            raise Inconclusive(f"authz probe {probe.name!r}: a session could not connect")
        base_reply = self._exchange(baseline.connection, probe.message)
        probe_reply = self._exchange(attacker.connection, probe.message)
        if probe_reply is None:
            raise Inconclusive(f"authz probe {probe.name!r}: no reply before timeout")
        if probe.success_pattern not in probe_reply:
            return None
        evidence = [reply.decode("utf-8", errors="replace")
                    for reply in (base_reply, probe_reply) if reply is not None]
        return Finding(
            CheckId.AUTHZ_BYPASS, evidence,
            detail=f"probe {probe.name!r}: privileged marker visible to the probe session",
        )


def _listify(value) -> List[Finding]:
    if value is None:
        return []
    return list(value) if isinstance(value, list) else [value]


def run_scan(config: ScanConfig) -> ScanReport:
    """Run every applicable check and collect findings, skips and errors."""
    scanner = Scanner(config)
    report = ScanReport(target=config.target, started_at=_now())
    try:
        connect(config.target, timeout=config.timeout, verify_tls=config.verify_tls).close()
    except TransportError as exc:
        report.errors.append(f"target unreachable: {exc}")
        report.finished_at = _now()
        return report

    plan: List[Tuple[str, Optional[Callable[[], object]]]] = [
        ("encryption", scanner.check_encryption),
        ("origin", scanner.check_origin_enforcement),
        ("cookie_auth", scanner.check_cookie_auth if config.cookies else None),
        ("cswh", scanner.check_cswh if config.cookies else None),
        ("token", scanner.check_token_mitigation if config.token_header else None),
        ("accept", scanner.check_accept_computation),
    ]
    for i, probe in enumerate(config.authz_probes):
        plan.append(("authz", lambda p=probe: scanner.replay_authz_probe(p)))
    if not config.authz_probes:
        plan.append(("authz", None))

    findings: List[Finding] = []
    for name, check in plan:
        if check is None:
            status = CheckStatus.SKIPPED
        else:
            try:
                findings.extend(_listify(check()))
                status = CheckStatus.RAN
            except (Inconclusive, TransportError, HandshakeParseError) as exc:
                log.warning("%s check inconclusive: %s", name, exc)
                report.errors.append(f"{name}: {exc}")
                status = CheckStatus.INCONCLUSIVE
        for check_id in CHECK_IDS[name]:
            previous = report.checks_run.get(check_id)
            if previous is None or previous is CheckStatus.RAN:
                report.checks_run[check_id] = status

    report.findings = sorted(findings, key=lambda f: f.check_id.order)
    report.transcripts = list(scanner.transcripts)
    report.finished_at = _now()
    return report


# Single-check entry points; transport failures propagate to the caller.

def check_encryption(config: ScanConfig) -> Optional[Finding]:
    return Scanner(config).check_encryption()


def check_origin_enforcement(config: ScanConfig) -> List[Finding]:
    return Scanner(config).check_origin_enforcement()


def check_cswh(config: ScanConfig) -> Optional[Finding]:
    return Scanner(config).check_cswh()


def check_cookie_auth(config: ScanConfig) -> Optional[Finding]:
    return Scanner(config).check_cookie_auth()


def check_token_mitigation(config: ScanConfig) -> Optional[Finding]:
    if config.token_header is None:
        return None
    return Scanner(config).check_token_mitigation()


def check_accept_computation(config: ScanConfig) -> List[Finding]:
    return Scanner(config).check_accept_computation()


def replay_authz_probe(config: ScanConfig, probe: AuthzProbe) -> Optional[Finding]:
    return Scanner(config).replay_authz_probe(probe)
