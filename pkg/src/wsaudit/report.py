"""Rendering of scan reports as text or JSON, and the CLI exit-code rule."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Dict, Optional

from .scanner import CheckId, CheckStatus, Finding, ScanReport, Severity

SCHEMA_VERSION = 1
EXCERPT_LIMIT = 2048
TRUNCATION_MARKER = "...[truncated]"

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2

REPORT_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "target", "started_at", "finished_at",
                 "findings", "checks_run", "errors"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "target": {"type": "string"},
        "started_at": {"type": "string"},
        "finished_at": {"type": "string"},
        "findings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["check_id", "severity", "evidence", "remediation", "detail"],
                "additionalProperties": False,
                "properties": {
                    "check_id": {"enum": [c.value for c in CheckId]},
                    "severity": {"enum": [s.value for s in Severity]},
                    "evidence": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "remediation": {"type": "string"},
                    "detail": {"type": "string"},
                },
            },
        },
        "checks_run": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["check_id", "status"],
                "additionalProperties": False,
                "properties": {
                    "check_id": {"enum": [c.value for c in CheckId]},
                    "status": {"enum": [s.value for s in CheckStatus]},
                },
            },
        },
        "errors": {"type": "array", "items": {"type": "string"}},
        "transcripts": {"type": "array", "items": {"type": "string"}},
    },
}


def truncate(text: str, limit: int = EXCERPT_LIMIT) -> str:
    data = text.encode("utf-8")
    if len(data) <= limit:
        return text
    return data[:limit].decode("utf-8", errors="ignore") + TRUNCATION_MARKER


def finding_to_dict(finding: Finding, full: bool = False) -> Dict[str, Any]:
    return {
        "check_id": finding.check_id.value,
        "severity": finding.severity.value,
        "evidence": [e if full else truncate(e) for e in finding.evidence],
        "remediation": finding.remediation,
        "detail": finding.detail,
    }


def to_dict(report: ScanReport, verbose: bool = False) -> Dict[str, Any]:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "target": report.target,
        "started_at": report.started_at,
        "finished_at": report.finished_at,
        "findings": [finding_to_dict(f, full=verbose) for f in report.findings],
        "checks_run": [{"check_id": c.value, "status": s.value}
                       for c, s in report.checks_run.items()],
        "errors": list(report.errors),
    }
    if verbose:
        doc["transcripts"] = list(report.transcripts)
    return doc


def from_dict(doc: Dict[str, Any]) -> ScanReport:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {doc.get('schema_version')!r}")
    return ScanReport(
        target=doc["target"],
        started_at=doc["started_at"],
        finished_at=doc["finished_at"],
        findings=[
            Finding(CheckId(f["check_id"]), tuple(f["evidence"]), detail=f["detail"],
                    severity=Severity(f["severity"]), remediation=f["remediation"])
            for f in doc["findings"]
        ],
        checks_run={CheckId(c["check_id"]): CheckStatus(c["status"]) for c in doc["checks_run"]},
        errors=list(doc["errors"]),
        transcripts=list(doc.get("transcripts", [])),
    )


def render_json(report: ScanReport, verbose: bool = False) -> str:
    return json.dumps(to_dict(report, verbose), indent=2, sort_keys=True) + "\n"


def _by_severity(report: ScanReport):
    return sorted(report.findings, key=lambda f: (-f.severity.rank, f.check_id.order))


def render_text(report: ScanReport, verbose: bool = False) -> str:
    out = [
        f"WebSocket audit of {report.target}",
        f"started {report.started_at}  finished {report.finished_at}",
        "",
        "Findings:",
    ]
    findings = _by_severity(report)
    if not findings:
        out.append("  no findings")
    for f in findings:
        out.append(f"  [{f.severity.value.upper()}] {f.check_id.value} "
                   f"({len(f.evidence)} evidence excerpt{'s' if len(f.evidence) != 1 else ''})")
        if f.detail:
            out.append(f"      {f.detail}")
        out.append(f"      fix: {f.remediation}")
        if verbose:
            for line in f.evidence:
                out.append(f"      > {line}")
    out += ["", "Checks:"]
    for check_id, status in report.checks_run.items():
        out.append(f"  {check_id.value:<24} {status.value}")
    if report.errors:
        out += ["", "Errors:"]
        out += [f"  {e}" for e in report.errors]
    if verbose and report.transcripts:
        out += ["", "Transcripts:"]
        for t in report.transcripts:
            out.append(t.replace("\r\n", "\n").rstrip("\n"))
            out.append("-" * 40)
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class RenderedReport:
    text: str
    structured: str


def render(report: ScanReport, fmt: str = "text", verbose: bool = False) -> str:
    if fmt == "json":
        return render_json(report, verbose)
    if fmt == "text":
        return render_text(report, verbose)
    raise ValueError(f"unknown format {fmt!r}")


def render_both(report: ScanReport, verbose: bool = False) -> RenderedReport:
    return RenderedReport(render_text(report, verbose), render_json(report, verbose))


def exit_code(report: Optional[ScanReport] = None, error: Optional[BaseException] = None) -> int:
    """0 clean, 1 findings, 2 usage/transport error (errors take precedence)."""
    if error is not None or report is None or report.errors:
        return EXIT_ERROR
    return EXIT_FINDINGS if report.findings else EXIT_CLEAN
