import socket

import pytest

from conftest import lab_config
from wsaudit.lab import AcceptMode, AuthMode, PrivilegedReply, ServerProfile, named_profile
from wsaudit.origin import OriginPolicy
from wsaudit.poc import generate_cswh_poc
from wsaudit.scanner import (
    AuthzProbe,
    CheckId,
    CheckStatus,
    Finding,
    Inconclusive,
    ScanConfig,
    Scanner,
    Severity,
    check_accept_computation,
    check_cookie_auth,
    check_cswh,
    check_encryption,
    check_origin_enforcement,
    check_token_mitigation,
    own_origin,
    replay_authz_probe,
    run_scan,
)
from wsaudit.errors import InputError

ANON = ServerProfile(origin_policy=OriginPolicy.allow_all(), auth_mode=AuthMode.NONE)


def ids(findings):
    return {f.check_id.value for f in findings if f is not None}


class TestEncryption:
    @pytest.mark.parametrize("url,flagged", [
        ("ws://h/", True), ("wss://h/", False), ("ws://h:443/", True),
    ])
    def test_scheme_decides(self, url, flagged):
        finding = check_encryption(ScanConfig(url))
        assert (finding is not None) == flagged
        if flagged:
            assert finding.severity is Severity.HIGH
            assert "wss://" in finding.remediation


class TestOrigin:
    def test_vulnerable(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        found = check_origin_enforcement(lab_config(lab))
        assert ids(found) == {"origin-not-enforced", "wildcard-origin"}
        assert any("Origin: https://attacker.example" in e for e in found[0].evidence)

    def test_hardened(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        assert check_origin_enforcement(lab_config(lab)) == []

    def test_own_origin_accepted_foreign_rejected(self, make_lab):
        lab = make_lab(ServerProfile(auth_mode=AuthMode.NONE))
        config = lab_config(lab, probe_origins=[lab.origin, "https://attacker.example"])
        assert check_origin_enforcement(config) == []

    def test_permissive_allowlist_is_not_wildcard(self, make_lab):
        lab = make_lab(ServerProfile(
            origin_policy=OriginPolicy.allowlist(["https://partner.example"]),
            auth_mode=AuthMode.NONE))
        config = lab_config(lab, probe_origins=["https://partner.example"])
        assert ids(check_origin_enforcement(config)) == {"origin-not-enforced"}

    def test_parallel_probes_agree(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        config = lab_config(lab, parallel=4, random_origins=3,
                            probe_origins=["https://a.example", "https://b.example"])
        found = check_origin_enforcement(config)
        assert ids(found) == {"origin-not-enforced", "wildcard-origin"}


class TestCswh:
    def test_vulnerable(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        finding = check_cswh(lab_config(lab))
        assert finding.check_id is CheckId.CSWH and finding.severity is Severity.CRITICAL
        # Evidence carries both the cookie-bearing and the cookie-less attempts.
        assert sum("401" in e for e in finding.evidence) == 1
        assert sum("101" in e for e in finding.evidence) == 2

    def test_hardened(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        assert check_cswh(lab_config(lab)) is None

    def test_nothing_cookie_gated(self, make_lab):
        lab = make_lab(ANON)
        assert check_cswh(lab_config(lab)) is None

    def test_cookie_gated_behaviour_without_rejection(self, make_lab):
        # Accepts everyone, but leaks extra data only to the cookie holder.
        grant = PrivilegedReply("", b"!", enforce=False)
        lab = make_lab(ServerProfile(origin_policy=OriginPolicy.allow_all(),
                                     auth_mode=AuthMode.NONE, privileged_reply=grant))
        config = lab_config(lab, cookies=[("session", "whatever")])
        assert check_cswh(config) is not None


class TestCookieAuth:
    def test_vulnerable(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        assert check_cookie_auth(lab_config(lab)).severity is Severity.MEDIUM

    def test_hardened(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        assert check_cookie_auth(lab_config(lab)) is None

    def test_anonymous(self, make_lab):
        lab = make_lab(ANON)
        assert check_cookie_auth(lab_config(lab)) is None


class TestToken:
    def test_hardened(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        assert check_token_mitigation(lab_config(lab)) is None

    def test_vulnerable(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        finding = check_token_mitigation(lab_config(lab))
        assert finding.check_id is CheckId.MISSING_TOKEN and finding.severity is Severity.HIGH
        assert "replayable-token" in finding.detail

    def test_not_configured_is_skipped(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        config = lab_config(lab, token_header=None)
        assert check_token_mitigation(config) is None
        report = run_scan(config)
        assert report.checks_run[CheckId.MISSING_TOKEN] is CheckStatus.SKIPPED


class TestAccept:
    def test_correct(self, make_lab):
        lab = make_lab(ANON)
        assert check_accept_computation(lab_config(lab)) == []

    def test_static(self, make_lab):
        lab = make_lab(ServerProfile(origin_policy=OriginPolicy.allow_all(),
                                     auth_mode=AuthMode.NONE, accept_mode=AcceptMode.STATIC))
        assert ids(check_accept_computation(lab_config(lab))) == {"bad-accept", "static-accept"}

    def test_trailing_whitespace_tolerated(self, scripted):
        server = scripted(accept_suffix="   ")
        assert check_accept_computation(ScanConfig(server.url)) == []

    def test_garbage_accept(self, scripted):
        server = scripted(accept_suffix="x")
        assert ids(check_accept_computation(ScanConfig(server.url))) == {"bad-accept"}

    def test_refused_handshake_is_inconclusive(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        with pytest.raises(Inconclusive):
            check_accept_computation(lab_config(lab, token_header=None))


class TestAuthz:
    def _setup(self, make_lab, enforce):
        grant = PrivilegedReply("admin-7f3c", b"|SECRET-BALANCE", enforce=enforce)
        lab = make_lab(ServerProfile(auth_mode=AuthMode.COOKIE, privileged_reply=grant))
        admin, guest = lab.issue_session("admin-7f3c"), lab.issue_session()
        probe = AuthzProbe("balance", (("session", admin.cookie_value),),
                           (("session", guest.cookie_value),), b"balance?", b"SECRET")
        return lab, probe

    def test_leaky_gate(self, make_lab):
        lab, probe = self._setup(make_lab, enforce=False)
        finding = replay_authz_probe(lab_config(lab), probe)
        assert finding.check_id is CheckId.AUTHZ_BYPASS
        assert finding.evidence == ("balance?|SECRET-BALANCE", "balance?|SECRET-BALANCE")

    def test_correct_gate(self, make_lab):
        lab, probe = self._setup(make_lab, enforce=True)
        assert replay_authz_probe(lab_config(lab), probe) is None

    def test_silent_server(self, scripted):
        server = scripted(silent=True)
        probe = AuthzProbe("p", (), (), b"x", b"y")
        config = ScanConfig(server.url, timeout_ms=300, authz_probes=[probe])
        with pytest.raises(Inconclusive):
            replay_authz_probe(config, probe)
        report = run_scan(config)
        assert report.checks_run[CheckId.AUTHZ_BYPASS] is CheckStatus.INCONCLUSIVE
        assert any("no reply" in e for e in report.errors)
        assert CheckId.AUTHZ_BYPASS not in report.check_ids

    def test_probe_validation(self):
        with pytest.raises(InputError):
            AuthzProbe("p", (), (), b"", b"x")


class TestRunScan:
    def test_vulnerable(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        report = run_scan(lab_config(lab))
        assert {"unencrypted-transport", "origin-not-enforced", "cookie-only-auth", "cswh",
                "missing-token"} <= ids(report.findings)
        assert report.errors == []
        order = [f.check_id.order for f in report.findings]
        assert order == sorted(order)

    def test_hardened(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        report = run_scan(lab_config(lab))
        assert report.findings == [] and report.errors == []

    def test_closed_port(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        report = run_scan(ScanConfig(f"ws://127.0.0.1:{port}/", timeout_ms=1000))
        assert report.findings == [] and report.errors

    def test_tls_verification_on_by_default(self, make_lab):
        lab = make_lab(named_profile("hardened"))
        report = run_scan(lab_config(lab, verify_tls=True))
        assert report.findings == [] and "certificate" in report.errors[0].lower()

    def test_evidence_comes_from_transcripts(self, make_lab):
        lab = make_lab(named_profile("vulnerable"))
        report = run_scan(lab_config(lab))
        for finding in report.findings:
            assert finding.check_id in report.checks_run
            if finding.check_id is CheckId.UNENCRYPTED_TRANSPORT:
                continue
            for excerpt in finding.evidence:
                assert any(excerpt in t for t in report.transcripts), excerpt


def test_own_origin():
    assert own_origin("ws://H:80/x") == "http://h"
    assert own_origin("wss://h:8443/x") == "https://h:8443"
    assert own_origin("ws://[::1]:9000/") == "http://[::1]:9000"


def test_config_validation():
    with pytest.raises(InputError):
        ScanConfig("http://h/")
    with pytest.raises(InputError):
        ScanConfig("ws://h/", timeout_ms=0)


def test_finding_needs_evidence():
    with pytest.raises(InputError):
        Finding(CheckId.CSWH, ())


class TestPoc:
    def test_contains_url(self):
        page = generate_cswh_poc("ws://localhost:9001/chat", "victim")
        assert '"ws://localhost:9001/chat"' in page
        assert "new WebSocket(target)" in page and "onmessage" in page

    def test_stable(self):
        assert generate_cswh_poc("ws://h/", "n") == generate_cswh_poc("ws://h/", "n")

    def test_self_contained(self):
        page = generate_cswh_poc("wss://h/x", "note")
        for marker in ("src=", "href=", "@import", "url("):
            assert marker not in page

    def test_script_injection_neutralised(self):
        page = generate_cswh_poc("ws://h/</script><script>alert(1)", "<b>")
        assert page.count("</script>") == 1 and "<b>" not in page

    def test_rejects_bad_url(self):
        with pytest.raises(InputError):
            generate_cswh_poc("http://h/")
