import pytest

from wsaudit.lab import LabServer, ServerProfile
from wsaudit.scanner import ScanConfig, TokenHeader


def expected_findings(profile: ServerProfile) -> set:
    """Finding set a correct scanner must report, read off the profile fields."""
    wildcard = profile.origin_policy.wildcard
    cookie = profile.auth_mode.requires_cookie
    token = profile.auth_mode.requires_token
    expected = set()
    if not profile.tls:
        expected.add("unencrypted-transport")
    if wildcard:
        expected |= {"origin-not-enforced", "wildcard-origin"}
    if cookie and not token:
        expected.add("cookie-only-auth")
        if wildcard:
            expected.add("cswh")
    if not token:
        expected.add("missing-token")
    if profile.accept_mode.value == "static":
        expected |= {"bad-accept", "static-accept"}
    return expected


def lab_config(lab: LabServer, session=None, **overrides) -> ScanConfig:
    """Scan config a tester would use against ``lab``: its cookie plus fresh tokens."""
    session = session or lab.issue_session()
    kwargs = dict(
        cookies=[(session.cookie_name, session.cookie_value)],
        token_header=TokenHeader(lab.profile.token_header_name, provider=lab.token_provider()),
        verify_tls=False,
        timeout_ms=5000,
    )
    kwargs.update(overrides)
    return ScanConfig(lab.url, **kwargs)


@pytest.fixture
def make_lab():
    servers = []

    def factory(profile: ServerProfile, **kwargs) -> LabServer:
        server = LabServer(profile, **kwargs).start()
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.stop()


class ScriptedServer:
    """Minimal plain-TCP upgrade server with hand-written quirks.

    ``accept_suffix`` is appended to the accept header value; with
    ``silent`` the server upgrades and then never answers a message.
    """

    def __init__(self, accept_suffix: str = "", silent: bool = False):
        import socket
        import threading

        self.accept_suffix = accept_suffix
        self.silent = silent
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(16)
        self.sock.settimeout(0.1)
        self.port = self.sock.getsockname()[1]
        self.url = f"ws://127.0.0.1:{self.port}/"
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        import socket
        import threading

        while not self._stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn):
        from wsaudit.frames import Frame, FrameDecoder, Opcode, encode_frame
        from wsaudit.handshake import compute_accept, parse_request_head

        with conn:
            conn.settimeout(5)
            buf = b""
            while b"\r\n\r\n" not in buf:
                chunk = conn.recv(4096)
                if not chunk:
                    return
                buf += chunk
            _, _, headers = parse_request_head(buf)
            accept = compute_accept(headers.get("Sec-WebSocket-Key", "")) + self.accept_suffix
            conn.sendall(("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                          f"Connection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n")
                         .encode())
            decoder = FrameDecoder()
            try:
                while True:
                    chunk = conn.recv(65536)
                    if not chunk:
                        return
                    for frame in decoder.feed(chunk):
                        if frame.opcode == Opcode.CLOSE:
                            conn.sendall(encode_frame(Frame(Opcode.CLOSE, frame.payload)))
                            return
                        if not self.silent:
                            conn.sendall(encode_frame(Frame(frame.opcode, frame.payload)))
            except OSError:
                return

    def close(self):
        self._stop.set()
        self._thread.join()
        self.sock.close()


@pytest.fixture
def scripted():
    servers = []

    def factory(**kwargs) -> ScriptedServer:
        server = ScriptedServer(**kwargs)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.close()


# -- acceptance criterion summary ------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    _criteria[number] = (title, _criteria.get(number, (title, True))[1] and passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"AC{number} {'PASS' if passed else 'FAIL'}  {title}")
