"""Exit criteria for the package, one test per criterion.

Run ``pytest tests/test_acceptance.py`` for a PASS/FAIL line per criterion
in the terminal summary.
"""

import random
import time

import pytest

from conftest import expected_findings, lab_config
from wsaudit.client import open_handshake
from wsaudit.frames import Frame, FrameDecoder, Opcode, decode_frame, encode_frame
from wsaudit.handshake import compute_accept
from wsaudit.lab import (
    MATRIX_SIZE,
    AcceptMode,
    AuthMode,
    LabServer,
    ServerProfile,
    matrix_profile,
    named_profile,
)
from wsaudit.origin import OriginPolicy, SameOriginReason, parse_origin, same_origin
from wsaudit.report import to_dict
from wsaudit.scanner import check_accept_computation, check_token_mitigation, run_scan

criterion = pytest.mark.criterion

# Produced by `printf '%s' 'dGhlIHNhbXBsZSBub25jZQ==258EAFA5-E914-47DA-95CA-C5AB0DC85B11'
#   | openssl dgst -sha1 -binary | base64` before compute_accept was written.
ORACLE_ACCEPT = "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


@criterion(1, "handshake accept vector matches the SHA-1/base64 oracle (< 1 s)")
def test_ac1_accept_vector():
    start = time.perf_counter()
    assert compute_accept("dGhlIHNhbXBsZSBub25jZQ==") == ORACLE_ACCEPT
    assert time.perf_counter() - start < 1.0


@criterion(2, "same-origin filter table reproduced exactly (< 1 s)")
def test_ac2_filter_table():
    start = time.perf_counter()
    base = parse_origin("http://store.company.com/dir/page.html")
    table = [
        ("http://store.company.com/dir2/other.html", True, SameOriginReason.SAME),
        ("http://store.company.com/dir/inner/another.html", True, SameOriginReason.SAME),
        ("https://store.company.com/secure.html", False, SameOriginReason.PROTOCOL_DIFFERS),
        ("http://store.company.com:81/dir/etc.html", False, SameOriginReason.PORT_DIFFERS),
        ("http://news.company.com/dir/other.html", False, SameOriginReason.HOST_DIFFERS),
    ]
    got = [(same_origin(base, parse_origin(u)).same, same_origin(base, parse_origin(u)).reason)
           for u, _, _ in table]
    assert got == [(same, reason) for _, same, reason in table]
    assert time.perf_counter() - start < 1.0


def _random_frames(n=10_000, seed=20261016):
    """Valid frames covering every opcode, mask state and length class."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        masked = rng.random() < 0.5
        key = rng.randbytes(4) if masked else None
        kind = i % 10
        if kind < 3:  # control
            opcode = rng.choice([Opcode.CLOSE, Opcode.PING, Opcode.PONG])
            out.append(Frame(opcode, rng.randbytes(rng.randint(0, 125)), True, key))
            continue
        opcode = rng.choice([Opcode.CONTINUATION, Opcode.TEXT, Opcode.BINARY])
        if kind < 7:
            length = rng.randint(0, 125)
        elif kind < 9:
            length = rng.randint(126, 65535)
        else:
            length = rng.randint(65536, 70000)
        out.append(Frame(opcode, rng.randbytes(length), rng.random() < 0.7, key))
    return out


@pytest.fixture(scope="module")
def frame_corpus():
    return _random_frames()


@criterion(3, "10,000 random frames round-trip, all length classes (< 30 s)")
def test_ac3_round_trip(frame_corpus):
    start = time.perf_counter()
    classes = set()
    failures = 0
    for frame in frame_corpus:
        wire = encode_frame(frame)
        classes.add(wire[1] & 0x7F if wire[1] & 0x7F >= 126 else "7bit")
        if decode_frame(wire) != (frame, len(wire)):
            failures += 1
    assert failures == 0
    assert classes == {"7bit", 126, 127}
    assert any(f.masked for f in frame_corpus) and any(f.opcode.is_control for f in frame_corpus)
    assert time.perf_counter() - start < 30.0


@criterion(4, "byte-at-a-time decode yields Incomplete until the last byte")
def test_ac4_streaming(frame_corpus):
    for frame in frame_corpus:
        wire = encode_frame(frame)
        decoder = FrameDecoder()
        for i in range(len(wire) - 1):
            assert decoder.feed(wire[i:i + 1]) == []
        assert decoder.feed(wire[-1:]) == [frame]


@criterion(5, "scanner finding set equals ground truth on all 32 lab profiles (< 2 min)")
def test_ac5_matrix():
    start = time.perf_counter()
    mismatches = []
    for index in range(MATRIX_SIZE):
        profile = matrix_profile(index)
        with LabServer(profile) as lab:
            report = run_scan(lab_config(lab))
        got = {f.check_id.value for f in report.findings}
        if got != expected_findings(profile) or report.errors:
            mismatches.append((index, profile.describe(), sorted(got),
                               sorted(expected_findings(profile)), report.errors))
    assert mismatches == []
    assert time.perf_counter() - start < 120.0


@criterion(6, "vulnerable lab flagged; hardened lab over TLS clean")
def test_ac6_named_profiles():
    with LabServer(named_profile("vulnerable")) as lab:
        vulnerable = {f.check_id.value for f in run_scan(lab_config(lab)).findings}
    assert vulnerable >= {"unencrypted-transport", "origin-not-enforced", "cookie-only-auth",
                          "cswh", "missing-token"}
    with LabServer(named_profile("hardened")) as lab:
        assert lab.url.startswith("wss://")
        report = run_scan(lab_config(lab))
    assert report.findings == [] and report.errors == []


@criterion(7, "static accept flagged 100/100, correct accept flagged 0/100")
def test_ac7_accept_modes():
    base = dict(origin_policy=OriginPolicy.allow_all(), auth_mode=AuthMode.NONE)
    counts = {}
    for mode in AcceptMode:
        with LabServer(ServerProfile(accept_mode=mode, **base)) as lab:
            config = lab_config(lab)
            flagged = 0
            for _ in range(100):
                found = {f.check_id.value for f in check_accept_computation(config)}
                if mode is AcceptMode.STATIC:
                    flagged += found == {"static-accept", "bad-accept"}
                else:
                    flagged += bool(found)
            counts[mode] = flagged
    assert counts == {AcceptMode.STATIC: 100, AcceptMode.CORRECT: 0}


@criterion(8, "hardened lab rejects missing and reused tokens; no missing-token finding")
def test_ac8_token_mitigation():
    with LabServer(named_profile("hardened")) as lab:
        session = lab.issue_session()
        cookies = [("session", session.cookie_value)]

        def attempt(token):
            header = ("X-CSRF-Token", token) if token else None
            return open_handshake(lab.url, origin=lab.origin, cookies=cookies,
                                  token_header=header, verify_tls=False, timeout=5)

        assert not attempt(None).switched
        assert check_token_mitigation(lab_config(lab, session=session)) is None
        assert attempt(session.token).verdict.accepted
        assert not attempt(session.token).switched


@criterion(9, "two scans of the same lab give identical reports modulo timestamps")
def test_ac9_idempotence():
    for name in ("vulnerable", "hardened"):
        with LabServer(named_profile(name)) as lab:
            config = lab_config(lab)
            first, second = to_dict(run_scan(config)), to_dict(run_scan(config))
        for doc in (first, second):
            doc.pop("started_at")
            doc.pop("finished_at")
        assert first == second
