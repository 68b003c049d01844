"""
HTTP/1.1 upgrade handshake: nonce generation, accept-token computation,
request building and response parsing/validation.

All functions are pure except :func:`generate_nonce`, which reads entropy.
Messages are bytes with CRLF line endings; a bare LF is a parse error.

A client typically does::

    nonce = generate_nonce()
    request = build_upgrade_request("ws://host/chat", origin=..., nonce=nonce)
    sock.sendall(request.serialize())
    response = parse_upgrade_response(read_until_blank_line(sock))
    verdict = validate_upgrade_response(response, nonce)
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple
from urllib.parse import urlsplit

from .errors import HandshakeParseError, InputError, NonceError

__all__ = [
    "GUID",
    "TRUNCATED_GUID",
    "DEFAULT_TIMEOUT",
    "Nonce",
    "Headers",
    "UpgradeRequest",
    "UpgradeResponse",
    "HandshakeReason",
    "HandshakeVerdict",
    "generate_nonce",
    "compute_accept",
    "build_upgrade_request",
    "parse_request_head",
    "parse_upgrade_request",
    "parse_cookie_header",
    "is_upgrade_request",
    "parse_upgrade_response",
    "validate_upgrade_response",
    "header_tokens",
]

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
# First group one hex digit short of GUID. Servers using it never
# interoperate with standard clients; kept for reproducing that variant.
TRUNCATED_GUID = "258EAF5-E914-47DA-95CA-C5AB0DC85B11"

DEFAULT_TIMEOUT = 10.0
NONCE_SIZE = 16
SHA1_SIZE = 20

Header = Tuple[str, str]


@dataclass(frozen=True)
class Nonce:
    raw: bytes
    encoded: str

    def __post_init__(self) -> None:
        if len(self.raw) != NONCE_SIZE:
            raise InputError(f"nonce must be {NONCE_SIZE} bytes, got {len(self.raw)}")
        if base64.b64decode(self.encoded, validate=True) != self.raw:
            raise InputError("encoded nonce does not match raw bytes")

    @classmethod
    def from_raw(cls, raw: bytes) -> "Nonce":
        return cls(bytes(raw), base64.b64encode(raw).decode("ascii"))

    @classmethod
    def from_encoded(cls, encoded: str) -> "Nonce":
        try:
            raw = base64.b64decode(encoded, validate=True)
        except binascii.Error as exc:
            raise InputError(f"invalid base64 nonce {encoded!r}") from exc
        return cls(raw, encoded)


def generate_nonce(entropy: Callable[[int], bytes] = os.urandom) -> Nonce:
    """Draw a fresh 16-byte nonce from ``entropy(n)``."""
    raw = entropy(NONCE_SIZE)
    if raw is None or len(raw) < NONCE_SIZE:
        raise NonceError(f"entropy source returned {0 if raw is None else len(raw)} bytes")
    return Nonce.from_raw(bytes(raw[:NONCE_SIZE]))


def compute_accept(key: str, magic: str = GUID) -> str:
    """Return base64(SHA-1(key + magic)).

    The key is hashed as literal text; its base64 content is not checked.
    """
    try:
        material = (key + magic).encode("ascii")
    except UnicodeEncodeError as exc:
        raise InputError("Sec-WebSocket-Key must be ASCII") from exc
    return base64.b64encode(hashlib.sha1(material).digest()).decode("ascii")


class Headers:
    """Ordered, case-insensitive HTTP header multimap."""

    def __init__(self, items: Iterable[Header] = ()) -> None:
        self._items: Tuple[Header, ...] = tuple((str(k), str(v)) for k, v in items)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.get(name) is not None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Headers) and self._items == other._items

    def __hash__(self) -> int:
        return hash(self._items)

    def __repr__(self) -> str:
        return f"Headers({list(self._items)!r})"

    def get_all(self, name: str) -> list[str]:
        lname = name.lower()
        return [v for k, v in self._items if k.lower() == lname]

    def get(self, name: str, default: Optional[str] = None) -> Optional[str]:
        values = self.get_all(name)
        return values[0] if values else default

    def items(self) -> Tuple[Header, ...]:
        return self._items


def header_tokens(value: str) -> list[str]:
    """Split a comma-separated header value into lowercase tokens."""
    return [t.strip().lower() for t in value.split(",") if t.strip()]


def _has_token(headers: Headers, name: str, token: str) -> bool:
    return any(token in header_tokens(v) for v in headers.get_all(name))


@dataclass(frozen=True)
class UpgradeRequest:
    path: str
    host: str
    key: str
    origin: Optional[str] = None
    cookies: Tuple[Header, ...] = ()
    extra_headers: Tuple[Header, ...] = ()
    method: str = "GET"
    version: str = "13"

    def header_list(self) -> list[Header]:
        headers = [
            ("Host", self.host),
            ("Upgrade", "websocket"),
            ("Connection", "Upgrade"),
            ("Sec-WebSocket-Key", self.key),
            ("Sec-WebSocket-Version", self.version),
        ]
        if self.origin is not None:
            headers.append(("Origin", self.origin))
        if self.cookies:
            headers.append(("Cookie", "; ".join(f"{n}={v}" for n, v in self.cookies)))
        headers.extend(self.extra_headers)
        return headers

    @property
    def headers(self) -> Headers:
        return Headers(self.header_list())

    def serialize(self) -> bytes:
        lines = [f"{self.method} {self.path} HTTP/1.1"]
        lines += [f"{k}: {v}" for k, v in self.header_list()]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


@dataclass(frozen=True)
class UpgradeResponse:
    status: int
    reason: str = ""
    headers: Headers = field(default_factory=Headers)

    @property
    def accept(self) -> Optional[str]:
        value = self.headers.get("Sec-WebSocket-Accept")
        return value.strip() if value is not None else None

    @property
    def is_switch(self) -> bool:
        return (
            self.status == 101
            and _has_token(self.headers, "Upgrade", "websocket")
            and _has_token(self.headers, "Connection", "upgrade")
        )

    def serialize(self) -> bytes:
        lines = [f"HTTP/1.1 {self.status} {self.reason}".rstrip()]
        lines += [f"{k}: {v}" for k, v in self.headers]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


class HandshakeReason(str, enum.Enum):
    OK = "ok"
    BAD_STATUS = "bad-status"
    MISSING_UPGRADE_HEADER = "missing-upgrade-header"
    MISSING_CONNECTION_HEADER = "missing-connection-header"
    MISSING_ACCEPT = "missing-accept"
    ACCEPT_MISMATCH = "accept-mismatch"


@dataclass(frozen=True)
class HandshakeVerdict:
    reason: HandshakeReason

    @property
    def accepted(self) -> bool:
        return self.reason is HandshakeReason.OK

    @property
    def switched(self) -> bool:
        """The server agreed to upgrade, whatever it put in the accept header."""
        return self.reason in (
            HandshakeReason.OK,
            HandshakeReason.MISSING_ACCEPT,
            HandshakeReason.ACCEPT_MISMATCH,
        )


def parse_ws_url(url: str):
    try:
        parts = urlsplit(url)
        port = parts.port
    except ValueError as exc:
        raise InputError(f"malformed URL {url!r}: {exc}") from exc
    if parts.scheme.lower() not in ("ws", "wss"):
        raise InputError(f"URL scheme must be ws or wss: {url!r}")
    if not parts.hostname:
        raise InputError(f"URL has no host: {url!r}")
    return parts, port


def build_upgrade_request(
    url: str,
    origin: Optional[str] = None,
    cookies: Sequence[Header] = (),
    token_header: Optional[Header] = None,
    nonce: Optional[Nonce] = None,
    extra_headers: Sequence[Header] = (),
) -> UpgradeRequest:
    """Build the client's upgrade request for a ws:// or wss:// URL.

    Origin, Cookie and the token header are emitted only when supplied.
    """
    parts, port = parse_ws_url(url)
    host = parts.hostname
    if ":" in host:
        host = f"[{host}]"
    if port is not None:
        host = f"{host}:{port}"
    path = parts.path or "/"
    if parts.query:
        path = f"{path}?{parts.query}"
    if nonce is None:
        nonce = generate_nonce()
    extra = list(extra_headers)
    if token_header is not None:
        extra.append(tuple(token_header))
    return UpgradeRequest(
        path=path,
        host=host,
        key=nonce.encoded,
        origin=origin,
        cookies=tuple((str(n), str(v)) for n, v in cookies),
        extra_headers=tuple(extra),
    )


def _parse_head(data: bytes) -> tuple[str, list[Header]]:
    """Split a CRLF-delimited HTTP head into its start line and headers."""
    end = data.find(b"\r\n\r\n")
    limit = end + 3 if end >= 0 else len(data)
    bare = data.find(b"\n")
    while bare != -1 and bare <= limit:
        if bare == 0 or data[bare - 1] != 0x0D:
            raise HandshakeParseError("bare LF line ending", bare)
        bare = data.find(b"\n", bare + 1)
    if end < 0:
        raise HandshakeParseError("truncated headers: no terminating empty line", len(data))

    offset = data.find(b"\r\n")
    start_line = data[:offset].decode("latin-1")
    headers: list[Header] = []
    pos = offset + 2
    while pos < end + 2:
        eol = data.find(b"\r\n", pos)
        line = data[pos:eol].decode("latin-1")
        if line[:1] in (" ", "\t"):
            raise HandshakeParseError("obsolete header line folding", pos)
        name, sep, value = line.partition(":")
        if not sep or not name or name != name.strip():
            raise HandshakeParseError(f"malformed header line {line!r}", pos)
        headers.append((name, value.strip()))
        pos = eol + 2
    return start_line, headers


def parse_upgrade_response(data: bytes) -> UpgradeResponse:
    """Parse a server's handshake response head.

    ``data`` must contain the terminating empty line; bytes after it are
    ignored (they belong to the frame stream).
    """
    start_line, headers = _parse_head(data)
    parts = start_line.split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/1.") or not parts[1].isdigit() \
            or len(parts[1]) != 3:
        raise HandshakeParseError(f"malformed status line {start_line!r}", 0)
    reason = parts[2] if len(parts) == 3 else ""
    return UpgradeResponse(status=int(parts[1]), reason=reason, headers=Headers(headers))


_REQUEST_FIELDS = {"host", "upgrade", "connection", "sec-websocket-key",
                   "sec-websocket-version", "origin", "cookie"}


def parse_cookie_header(value: str) -> list[Header]:
    pairs = []
    for chunk in value.split(";"):
        name, sep, val = chunk.strip().partition("=")
        if sep and name:
            pairs.append((name.strip(), val.strip()))
    return pairs


def parse_request_head(data: bytes) -> tuple[str, str, Headers]:
    """Return (method, target, headers) of an HTTP/1.x request head."""
    start_line, headers = _parse_head(data)
    parts = start_line.split(" ")
    if len(parts) != 3 or not parts[2].startswith("HTTP/1."):
        raise HandshakeParseError(f"malformed request line {start_line!r}", 0)
    return parts[0], parts[1], Headers(headers)


def parse_upgrade_request(data: bytes) -> UpgradeRequest:
    """Parse a client's upgrade request head.

    Headers that are not modelled as fields land in ``extra_headers`` in
    wire order. Structural problems raise :class:`HandshakeParseError`;
    semantic checks (method, version, key shape) are the server's job.
    """
    method, target, h = parse_request_head(data)
    keys = h.get_all("Sec-WebSocket-Key")
    cookies: list[Header] = []
    for value in h.get_all("Cookie"):
        cookies.extend(parse_cookie_header(value))
    return UpgradeRequest(
        method=method,
        path=target,
        host=h.get("Host", ""),
        key=keys[0] if len(keys) == 1 else "",
        version=h.get("Sec-WebSocket-Version", ""),
        origin=h.get("Origin"),
        cookies=tuple(cookies),
        extra_headers=tuple((k, v) for k, v in h if k.lower() not in _REQUEST_FIELDS),
    )


def is_upgrade_request(headers: Headers) -> bool:
    """True if request headers carry the Upgrade/Connection tokens and one key."""
    return (
        _has_token(headers, "Upgrade", "websocket")
        and _has_token(headers, "Connection", "upgrade")
        and len(headers.get_all("Sec-WebSocket-Key")) == 1
    )


def validate_upgrade_response(
    response: UpgradeResponse, nonce: Nonce, magic: str = GUID
) -> HandshakeVerdict:
    """Judge a parsed response against the nonce that was sent.

    The reason names the first failing criterion, checked in the order
    status, Upgrade, Connection, accept presence, accept value.
    """
    if response.status != 101:
        return HandshakeVerdict(HandshakeReason.BAD_STATUS)
    if not _has_token(response.headers, "Upgrade", "websocket"):
        return HandshakeVerdict(HandshakeReason.MISSING_UPGRADE_HEADER)
    if not _has_token(response.headers, "Connection", "upgrade"):
        return HandshakeVerdict(HandshakeReason.MISSING_CONNECTION_HEADER)
    if response.accept is None:
        return HandshakeVerdict(HandshakeReason.MISSING_ACCEPT)
    if response.accept != compute_accept(nonce.encoded, magic):
        return HandshakeVerdict(HandshakeReason.ACCEPT_MISMATCH)
    return HandshakeVerdict(HandshakeReason.OK)
