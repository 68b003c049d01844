"""
Configurable WebSocket echo server used as a ground-truth scan target.

Each :class:`ServerProfile` fixes one point in the weakness space: origin
policy, whether a session cookie and/or a CSRF token is demanded at
handshake time, whether the accept header is computed or static, and
whether the listener speaks TLS. Rejections happen before the upgrade,
as plain HTTP responses, so a client can tell enforcement from breakage.
"""

from __future__ import annotations

import datetime
import enum
import ipaddress
import logging
import os
import secrets
import socket
import ssl
import tempfile
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .errors import HandshakeParseError, ProtocolError, WSAuditError
from .frames import (
    Frame,
    FrameDecoder,
    MessageAssembler,
    Opcode,
    close_payload,
    encode_frame,
)
from .handshake import (
    GUID,
    Header,
    Headers,
    UpgradeResponse,
    compute_accept,
    is_upgrade_request,
    parse_cookie_header,
    parse_request_head,
)
from .origin import OriginPolicy, OriginTriple, is_allowed, parse_origin

log = logging.getLogger(__name__)

__all__ = [
    "AuthMode",
    "AcceptMode",
    "PrivilegedReply",
    "ServerProfile",
    "Session",
    "LabServer",
    "LabError",
    "STATIC_ACCEPT",
    "named_profile",
    "matrix_profile",
    "MATRIX_SIZE",
    "start",
    "issue_session",
    "stop",
]

# Accept value a "static" server returns no matter which key it was sent.
STATIC_ACCEPT = compute_accept("dGhlIHNhbXBsZSBub25jZQ==")
MATRIX_SIZE = 32
POLL_INTERVAL = 0.1


class LabError(WSAuditError):
    """The lab server could not be configured or started."""


class AuthMode(str, enum.Enum):
    NONE = "none"
    COOKIE = "cookie"
    TOKEN = "token"
    COOKIE_TOKEN = "cookie+token"

    @property
    def requires_cookie(self) -> bool:
        return self in (AuthMode.COOKIE, AuthMode.COOKIE_TOKEN)

    @property
    def requires_token(self) -> bool:
        return self in (AuthMode.TOKEN, AuthMode.COOKIE_TOKEN)


class AcceptMode(str, enum.Enum):
    CORRECT = "correct"
    STATIC = "static"


@dataclass(frozen=True)
class PrivilegedReply:
    """Bytes appended to echoes for one privileged session.

    With ``enforce=False`` the gate is broken: any connection presenting a
    session cookie receives the reply.
    """

    required_cookie_value: str
    reply: bytes
    enforce: bool = True


@dataclass(frozen=True)
class ServerProfile:
    # An empty allowlist still admits the server's own origin; see LabServer.
    origin_policy: OriginPolicy = field(default_factory=OriginPolicy)
    auth_mode: AuthMode = AuthMode.COOKIE
    accept_mode: AcceptMode = AcceptMode.CORRECT
    tls: bool = False
    session_cookie_name: str = "session"
    token_header_name: str = "X-CSRF-Token"
    static_accept: Optional[str] = STATIC_ACCEPT
    privileged_reply: Optional[PrivilegedReply] = None
    magic: str = GUID

    def __post_init__(self) -> None:
        if self.auth_mode.requires_token and not self.token_header_name:
            raise LabError("token auth needs a token header name")
        if self.accept_mode is AcceptMode.STATIC and not self.static_accept:
            raise LabError("static accept mode needs a fixed accept value")

    def describe(self) -> str:
        return (f"origin={self.origin_policy.mode} auth={self.auth_mode.value} "
                f"accept={self.accept_mode.value} tls={'on' if self.tls else 'off'}")


def named_profile(name: str) -> ServerProfile:
    if name == "vulnerable":
        return ServerProfile(origin_policy=OriginPolicy.allow_all(),
                             auth_mode=AuthMode.COOKIE, tls=False)
    if name == "hardened":
        return ServerProfile(origin_policy=OriginPolicy(),
                             auth_mode=AuthMode.COOKIE_TOKEN, tls=True)
    raise LabError(f"unknown profile {name!r}; expected vulnerable or hardened")


def matrix_profile(index: int) -> ServerProfile:
    """Profile number ``index`` of the 32-point test matrix.

    Bits, high to low: wildcard origin, cookie required, token required,
    static accept, TLS.
    """
    if not 0 <= index < MATRIX_SIZE:
        raise LabError(f"matrix index must be in 0..{MATRIX_SIZE - 1}")
    wildcard, cookie, token, static, tls = ((index >> bit) & 1 for bit in (4, 3, 2, 1, 0))
    auth = {(0, 0): AuthMode.NONE, (1, 0): AuthMode.COOKIE,
            (0, 1): AuthMode.TOKEN, (1, 1): AuthMode.COOKIE_TOKEN}[cookie, token]
    return ServerProfile(
        origin_policy=OriginPolicy.allow_all() if wildcard else OriginPolicy(),
        auth_mode=auth,
        accept_mode=AcceptMode.STATIC if static else AcceptMode.CORRECT,
        tls=bool(tls),
    )


@dataclass(frozen=True)
class Session:
    cookie_name: str
    cookie_value: str
    token: str

    @property
    def cookie(self) -> str:
        return f"{self.cookie_name}={self.cookie_value}"


_tls_material: Optional[Tuple[str, str]] = None
_tls_lock = threading.Lock()


def self_signed_material() -> Tuple[str, str]:
    """Create (once per process) a self-signed cert for localhost/127.0.0.1."""
    global _tls_material
    with _tls_lock:
        if _tls_material is not None:
            return _tls_material
        from cryptography import x509
        from cryptography.hazmat.primitives import hashes, serialization
        from cryptography.hazmat.primitives.asymmetric import ec
        from cryptography.x509.oid import NameOID

        key = ec.generate_private_key(ec.SECP256R1())
        name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "wsaudit-lab")])
        now = datetime.datetime.now(datetime.timezone.utc)
        cert = (
            x509.CertificateBuilder()
            .subject_name(name)
            .issuer_name(name)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - datetime.timedelta(minutes=5))
            .not_valid_after(now + datetime.timedelta(days=7))
            .add_extension(x509.SubjectAlternativeName([
                x509.DNSName("localhost"),
                x509.IPAddress(ipaddress.ip_address("127.0.0.1")),
                x509.IPAddress(ipaddress.ip_address("::1")),
            ]), critical=False)
            .sign(key, hashes.SHA256())
        )
        tmpdir = tempfile.mkdtemp(prefix="wsaudit-lab-")
        certfile = os.path.join(tmpdir, "cert.pem")
        keyfile = os.path.join(tmpdir, "key.pem")
        with open(certfile, "wb") as fh:
            fh.write(cert.public_bytes(serialization.Encoding.PEM))
        with open(keyfile, "wb") as fh:
            fh.write(key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption(),
            ))
        _tls_material = (certfile, keyfile)
        return _tls_material


def _reject(status: int, reason: str, extra: Sequence[Header] = ()) -> bytes:
    body = f"{status} {reason}\n".encode("ascii")
    headers = [("Content-Type", "text/plain"), ("Content-Length", str(len(body))),
               ("Connection", "close"), *extra]
    return UpgradeResponse(status, reason, Headers(headers)).serialize() + body


class LabServer:
    """Threaded echo server enforcing one :class:`ServerProfile`."""

    def __init__(self, profile: ServerProfile, host: str = "127.0.0.1", port: int = 0,
                 certfile: Optional[str] = None, keyfile: Optional[str] = None) -> None:
        self.profile = profile
        self.host = host
        self.port = port
        self.certfile = certfile
        self.keyfile = keyfile
        self._listener: Optional[socket.socket] = None
        self._ssl: Optional[ssl.SSLContext] = None
        self._stopping = threading.Event()
        self._acceptor: Optional[threading.Thread] = None
        self._threads: List[threading.Thread] = []
        self._lock = threading.Lock()
        self._sessions: Dict[str, Set[str]] = {}
        self._token_owner: Dict[str, str] = {}
        self.policy = profile.origin_policy

    # -- lifecycle -----------------------------------------------------

    def start(self) -> "LabServer":
        if self.profile.tls:
            if self.certfile is None:
                self.certfile, self.keyfile = self_signed_material()
            for path in (self.certfile, self.keyfile):
                if not path or not os.path.exists(path):
                    raise LabError(f"TLS material missing: {path!r}")
            self._ssl = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            self._ssl.load_cert_chain(self.certfile, self.keyfile)
        family = socket.AF_INET6 if ":" in self.host else socket.AF_INET
        listener = socket.socket(family, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.port))
        except OSError as exc:
            listener.close()
            raise LabError(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        listener.listen(64)
        listener.settimeout(POLL_INTERVAL)
        self.port = listener.getsockname()[1]
        self._listener = listener
        self.policy = self.profile.origin_policy.extended(self.own_origins())
        self._acceptor = threading.Thread(target=self._accept_loop, name="lab-accept",
                                          daemon=True)
        self._acceptor.start()
        log.info("lab listening on %s (%s)", self.url, self.profile.describe())
        return self

    def stop(self) -> None:
        """Close the listener and every open connection (with a close frame)."""
        if self._stopping.is_set():
            return
        self._stopping.set()
        if self._acceptor is not None:
            self._acceptor.join(timeout=5)
        with self._lock:
            threads = list(self._threads)
        for thread in threads:
            thread.join(timeout=5)
        if self._listener is not None:
            self._listener.close()

    def __enter__(self) -> "LabServer":
        return self.start() if self._listener is None else self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def running(self) -> bool:
        return self._listener is not None and not self._stopping.is_set()

    @property
    def scheme(self) -> str:
        return "wss" if self.profile.tls else "ws"

    @property
    def url(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        return f"{self.scheme}://{host}:{self.port}/chat"

    @property
    def origin(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        return f"{'https' if self.profile.tls else 'http'}://{host}:{self.port}"

    def own_origins(self) -> List[OriginTriple]:
        scheme = "https" if self.profile.tls else "http"
        hosts = {self.host.lower(), "localhost"}
        return [OriginTriple(scheme, h, self.port) for h in sorted(hosts)]

    # -- sessions ------------------------------------------------------

    def issue_session(self, cookie_value: Optional[str] = None) -> Session:
        value = cookie_value or secrets.token_urlsafe(24)
        token = secrets.token_urlsafe(24)  # 192 bits
        with self._lock:
            self._sessions.setdefault(value, set()).add(token)
            self._token_owner[token] = value
        return Session(self.profile.session_cookie_name, value, token)

    def issue_token(self, cookie_value: str) -> str:
        """Mint another single-use token bound to an existing session."""
        token = secrets.token_urlsafe(24)
        with self._lock:
            if cookie_value not in self._sessions:
                raise LabError("unknown session")
            self._sessions[cookie_value].add(token)
            self._token_owner[token] = cookie_value
        return token

    def token_provider(self) -> Callable[[Sequence[Header]], Optional[str]]:
        """Return a callable that mints a fresh token for the session in ``cookies``."""

        def provide(cookies: Sequence[Header]) -> Optional[str]:
            for name, value in cookies:
                if name == self.profile.session_cookie_name and value in self._sessions:
                    return self.issue_token(value)
            return None

        return provide

    def _session_valid(self, value: Optional[str]) -> bool:
        with self._lock:
            return value is not None and value in self._sessions

    def _consume_token(self, token: Optional[str], cookie_value: Optional[str]) -> bool:
        if not token:
            return False
        with self._lock:
            owner = self._token_owner.get(token)
            if owner is None:
                return False
            if self.profile.auth_mode.requires_cookie and owner != cookie_value:
                return False
            del self._token_owner[token]
            self._sessions[owner].discard(token)
            return True

    # -- handshake decision -------------------------------------------

    def decide(self, origin: Optional[str], cookie_value: Optional[str],
               token: Optional[str], consume: bool = True) -> Tuple[int, str]:
        """Status and reason the server answers for these credentials.

        Gates are checked in order origin, cookie, token. A valid token is
        consumed only when every gate passes and ``consume`` is set.
        """
        try:
            parsed = parse_origin(origin) if origin is not None else None
        except WSAuditError:
            parsed = None
        if not self.policy.wildcard and (parsed is None or not is_allowed(self.policy, parsed)):
            return 403, "Forbidden"
        if self.profile.auth_mode.requires_cookie and not self._session_valid(cookie_value):
            return 401, "Unauthorized"
        if self.profile.auth_mode.requires_token:
            if consume:
                ok = self._consume_token(token, cookie_value)
            else:
                with self._lock:
                    owner = self._token_owner.get(token or "")
                ok = owner is not None and (
                    not self.profile.auth_mode.requires_cookie or owner == cookie_value)
            if not ok:
                return 403, "Forbidden"
        return 101, "Switching Protocols"

    # -- connection handling ------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            thread = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            with self._lock:
                self._threads = [t for t in self._threads if t.is_alive()]
                self._threads.append(thread)
            thread.start()

    def _serve(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(10)
            if self._ssl is not None:
                conn = self._ssl.wrap_socket(conn, server_side=True)
            session = self._handshake(conn)
            if session is not None:
                self._echo(conn, session)
        except (OSError, ssl.SSLError, WSAuditError) as exc:
            log.debug("lab connection ended: %s", exc)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _handshake(self, conn: socket.socket):
        buf = b""
        while b"\r\n\r\n" not in buf:
            chunk = conn.recv(4096)
            if not chunk or len(buf) > 64 * 1024:
                return None
            buf += chunk
        end = buf.index(b"\r\n\r\n") + 4
        head, leftover = buf[:end], buf[end:]
        try:
            method, _target, headers = parse_request_head(head)
        except HandshakeParseError:
            conn.sendall(_reject(400, "Bad Request"))
            return None
        if method != "GET" or not is_upgrade_request(headers):
            conn.sendall(_reject(400, "Bad Request"))
            return None
        if headers.get("Sec-WebSocket-Version") != "13":
            conn.sendall(_reject(426, "Upgrade Required", [("Sec-WebSocket-Version", "13")]))
            return None
        cookies = []
        for value in headers.get_all("Cookie"):
            cookies.extend(parse_cookie_header(value))
        cookie_value = next((v for n, v in cookies
                             if n == self.profile.session_cookie_name), None)
        token = headers.get(self.profile.token_header_name) \
            if self.profile.token_header_name else None
        status, reason = self.decide(headers.get("Origin"), cookie_value, token)
        if status != 101:
            conn.sendall(_reject(status, reason))
            return None
        key = headers.get("Sec-WebSocket-Key", "")
        if self.profile.accept_mode is AcceptMode.STATIC:
            accept = self.profile.static_accept
        else:
            accept = compute_accept(key, self.profile.magic)
        response = UpgradeResponse(101, "Switching Protocols", Headers([
            ("Upgrade", "websocket"),
            ("Connection", "Upgrade"),
            ("Sec-WebSocket-Accept", accept),
        ]))
        conn.sendall(response.serialize())
        return cookie_value, leftover

    def _privileged_for(self, cookie_value: Optional[str]) -> bytes:
        grant = self.profile.privileged_reply
        if grant is None or cookie_value is None:
            return b""
        if grant.enforce and cookie_value != grant.required_cookie_value:
            return b""
        return grant.reply

    def _send(self, conn: socket.socket, opcode: Opcode, payload: bytes) -> None:
        conn.sendall(encode_frame(Frame(opcode, payload)))

    def _echo(self, conn: socket.socket, session) -> None:
        cookie_value, leftover = session
        decoder = FrameDecoder()
        assembler = MessageAssembler()
        extra = self._privileged_for(cookie_value)
        conn.settimeout(POLL_INTERVAL)
        data = leftover
        while True:
            try:
                frames = decoder.feed(data)
                for frame in frames:
                    if not frame.masked:
                        raise ProtocolError("unmasked-client-frame",
                                            "client frames must be masked")
                    message = assembler.feed(frame)
                    if frame.opcode == Opcode.PING:
                        self._send(conn, Opcode.PONG, frame.payload)
                    elif frame.opcode == Opcode.CLOSE:
                        info = assembler.result.close
                        self._send(conn, Opcode.CLOSE, close_payload(info.code if info else None))
                        return
                    elif message is not None:
                        self._send(conn, message.kind, message.data + extra)
            except ProtocolError as exc:
                self._send(conn, Opcode.CLOSE, close_payload(1002, exc.rule[:100]))
                return
            while True:
                if self._stopping.is_set():
                    self._send(conn, Opcode.CLOSE, close_payload(1001, "server shutdown"))
                    return
                try:
                    data = conn.recv(65536)
                    break
                except (socket.timeout, ssl.SSLWantReadError):
                    continue
            if not data:
                return


def start(profile: ServerProfile, host: str = "127.0.0.1", port: int = 0) -> LabServer:
    return LabServer(profile, host, port).start()


def issue_session(handle: LabServer) -> Session:
    return handle.issue_session()


def stop(handle: LabServer) -> None:
    handle.stop()
