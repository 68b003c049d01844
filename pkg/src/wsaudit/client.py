"""Blocking client-side transport: open a socket, run the handshake, exchange frames."""

from __future__ import annotations

import os
import socket
import ssl
from dataclasses import dataclass
from typing import Callable, Optional, Sequence
from urllib.parse import urlsplit

from .errors import HandshakeParseError, ProtocolError, TransportError
from .frames import (
    Frame,
    FrameDecoder,
    Message,
    MessageAssembler,
    Opcode,
    close_payload,
    encode_frame,
)
from .handshake import (
    DEFAULT_TIMEOUT,
    GUID,
    Header,
    HandshakeVerdict,
    Nonce,
    UpgradeRequest,
    UpgradeResponse,
    build_upgrade_request,
    generate_nonce,
    parse_upgrade_response,
    validate_upgrade_response,
)

MAX_HEAD = 64 * 1024


def connect(url: str, timeout: float = DEFAULT_TIMEOUT, verify_tls: bool = True) -> socket.socket:
    """Open a TCP (ws) or TLS (wss) socket to the URL's host and port."""
    parts = urlsplit(url)
    secure = parts.scheme.lower() == "wss"
    host = parts.hostname or ""
    port = parts.port or (443 if secure else 80)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc.strerror or exc}") from exc
    if not secure:
        return sock
    context = ssl.create_default_context()
    if not verify_tls:
        context.check_hostname = False
        context.verify_mode = ssl.CERT_NONE
    try:
        return context.wrap_socket(sock, server_hostname=host)
    except (OSError, ssl.SSLError) as exc:
        sock.close()
        raise TransportError(f"TLS handshake with {host}:{port} failed: {exc}") from exc


def read_head(sock: socket.socket, limit: int = MAX_HEAD) -> tuple[bytes, bytes]:
    """Read up to and including the blank line; return (head, leftover)."""
    buf = b""
    while b"\r\n\r\n" not in buf:
        if len(buf) > limit:
            raise HandshakeParseError("response head too large", len(buf))
        try:
            chunk = sock.recv(4096)
        except socket.timeout as exc:
            raise TransportError("timed out waiting for handshake response") from exc
        except OSError as exc:
            raise TransportError(f"connection error during handshake: {exc}") from exc
        if not chunk:
            if not buf:
                raise TransportError("connection closed before any handshake response")
            raise HandshakeParseError("truncated headers: connection closed", len(buf))
        buf += chunk
    end = buf.index(b"\r\n\r\n") + 4
    return buf[:end], buf[end:]


class WebSocketConnection:
    """Client side of an upgraded connection. Outgoing frames are always masked."""

    def __init__(self, sock: socket.socket, leftover: bytes = b"",
                 mask_source: Callable[[int], bytes] = os.urandom) -> None:
        self.sock = sock
        self.decoder = FrameDecoder()
        self.assembler = MessageAssembler()
        self._mask_source = mask_source
        self._pending = self.decoder.feed(leftover)
        self.closed = False

    def send_frame(self, opcode: Opcode, payload: bytes) -> None:
        frame = Frame(opcode, payload, masking_key=self._mask_source(4))
        try:
            self.sock.sendall(encode_frame(frame))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def send(self, data) -> None:
        if isinstance(data, str):
            self.send_frame(Opcode.TEXT, data.encode("utf-8"))
        else:
            self.send_frame(Opcode.BINARY, bytes(data))

    def recv_message(self, timeout: float = DEFAULT_TIMEOUT) -> Optional[Message]:
        """Next data message, or None on timeout or close. Pings are answered."""
        self.sock.settimeout(timeout)
        while not self.closed:
            while self._pending:
                frame = self._pending.pop(0)
                message = self.assembler.feed(frame)
                if frame.opcode == Opcode.PING:
                    self.send_frame(Opcode.PONG, frame.payload)
                elif frame.opcode == Opcode.CLOSE:
                    self._reply_close()
                    return None
                if message is not None:
                    return message
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                self.closed = True
                return None
            self._pending.extend(self.decoder.feed(chunk))
        return None

    def _reply_close(self) -> None:
        info = self.assembler.result.close
        try:
            self.send_frame(Opcode.CLOSE, close_payload(info.code if info else None))
        except TransportError:
            pass
        self._teardown()

    def close(self, code: int = 1000, timeout: float = 1.0) -> None:
        if self.closed:
            return
        try:
            self.send_frame(Opcode.CLOSE, close_payload(code))
            self.sock.settimeout(timeout)
            # Drain until the peer echoes the close or hangs up.
            while self.assembler.result.close is None:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                for frame in self.decoder.feed(chunk):
                    if frame.opcode == Opcode.CLOSE:
                        self.assembler.feed(frame)
                        break
        except (OSError, TransportError, ProtocolError):
            pass
        self._teardown()

    def _teardown(self) -> None:
        self.closed = True
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "WebSocketConnection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class HandshakeResult:
    url: str
    nonce: Nonce
    request: UpgradeRequest
    request_bytes: bytes
    response: UpgradeResponse
    response_bytes: bytes
    verdict: HandshakeVerdict
    connection: Optional[WebSocketConnection] = None

    @property
    def switched(self) -> bool:
        return self.verdict.switched

    @property
    def transcript(self) -> str:
        return (self.request_bytes + self.response_bytes).decode("latin-1")

    def request_line(self, name: str) -> Optional[str]:
        """The serialized ``Name: value`` request line, if present."""
        value = self.request.headers.get(name)
        return None if value is None else f"{name}: {value}"

    def response_line(self, name: str) -> Optional[str]:
        for k, v in self.response.headers:
            if k.lower() == name.lower():
                line = f"{k}: "
                head = self.response_bytes.decode("latin-1")
                start = head.find(line)
                return head[start:head.index("\r\n", start)] if start >= 0 else None
        return None

    @property
    def status_line(self) -> str:
        head = self.response_bytes.decode("latin-1")
        return head[:head.index("\r\n")]

    @property
    def request_start_line(self) -> str:
        head = self.request_bytes.decode("latin-1")
        return head[:head.index("\r\n")]


def open_handshake(
    url: str,
    *,
    origin: Optional[str] = None,
    cookies: Sequence[Header] = (),
    token_header: Optional[Header] = None,
    nonce: Optional[Nonce] = None,
    timeout: float = DEFAULT_TIMEOUT,
    verify_tls: bool = True,
    magic: str = GUID,
    keep_open: bool = False,
) -> HandshakeResult:
    """Perform one upgrade handshake against ``url``.

    The socket is closed afterwards unless ``keep_open`` is set and the
    server switched protocols, in which case ``result.connection`` is live.
    """
    nonce = nonce or generate_nonce()
    request = build_upgrade_request(url, origin=origin, cookies=cookies,
                                    token_header=token_header, nonce=nonce)
    sock = connect(url, timeout=timeout, verify_tls=verify_tls)
    try:
        request_bytes = request.serialize()
        try:
            sock.sendall(request_bytes)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc
        head, leftover = read_head(sock)
        response = parse_upgrade_response(head)
        verdict = validate_upgrade_response(response, nonce, magic)
    except BaseException:
        sock.close()
        raise
    result = HandshakeResult(url, nonce, request, request_bytes, response, head, verdict)
    if keep_open and verdict.switched:
        result.connection = WebSocketConnection(sock, leftover)
    elif verdict.switched:
        WebSocketConnection(sock, leftover).close(timeout=0.5)
    else:
        sock.close()
    return result
