"""Origin parsing, same-origin classification and allowlist policies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Union
from urllib.parse import urlsplit

from .errors import InputError

__all__ = [
    "DEFAULT_PORTS",
    "OriginTriple",
    "NULL_ORIGIN",
    "SameOriginReason",
    "SameOriginVerdict",
    "OriginPolicy",
    "parse_origin",
    "same_origin",
    "is_allowed",
    "parse_policy",
]

DEFAULT_PORTS = {"http": 80, "ws": 80, "https": 443, "wss": 443}


@dataclass(frozen=True)
class OriginTriple:
    scheme: str
    host: str
    port: int
    opaque: bool = False

    def __post_init__(self) -> None:
        if self.opaque:
            return
        if self.scheme not in DEFAULT_PORTS:
            raise InputError(f"unsupported origin scheme {self.scheme!r}")
        if not self.host:
            raise InputError("origin host is empty")
        if not 1 <= self.port <= 65535:
            raise InputError(f"origin port {self.port} out of range")

    def serialize(self) -> str:
        if self.opaque:
            return "null"
        host = f"[{self.host}]" if ":" in self.host else self.host
        if self.port == DEFAULT_PORTS[self.scheme]:
            return f"{self.scheme}://{host}"
        return f"{self.scheme}://{host}:{self.port}"

    def __str__(self) -> str:
        return self.serialize()


# Opaque origin: compares unequal to everything, itself included.
NULL_ORIGIN = OriginTriple("", "", 0, opaque=True)


def parse_origin(text: str) -> OriginTriple:
    """Parse ``scheme://host[:port][/...]``; path, query and fragment are dropped."""
    text = text.strip()
    if text == "null":
        return NULL_ORIGIN
    if "://" not in text:
        raise InputError(f"origin {text!r} has no scheme")
    parts = urlsplit(text)
    scheme = parts.scheme.lower()
    if scheme not in DEFAULT_PORTS:
        raise InputError(f"unsupported origin scheme in {text!r}")
    try:
        port = parts.port
    except ValueError as exc:
        raise InputError(f"bad port in origin {text!r}") from exc
    host = (parts.hostname or "").lower()
    if not host:
        raise InputError(f"origin {text!r} has no host")
    return OriginTriple(scheme, host, port if port is not None else DEFAULT_PORTS[scheme])


class SameOriginReason(str, enum.Enum):
    SAME = "same"
    PROTOCOL_DIFFERS = "protocol-differs"
    HOST_DIFFERS = "host-differs"
    PORT_DIFFERS = "port-differs"


@dataclass(frozen=True)
class SameOriginVerdict:
    reason: SameOriginReason

    @property
    def same(self) -> bool:
        return self.reason is SameOriginReason.SAME


def same_origin(a: OriginTriple, b: OriginTriple) -> SameOriginVerdict:
    if a.opaque or b.opaque or a.scheme != b.scheme:
        return SameOriginVerdict(SameOriginReason.PROTOCOL_DIFFERS)
    if a.host != b.host:
        return SameOriginVerdict(SameOriginReason.HOST_DIFFERS)
    if a.port != b.port:
        return SameOriginVerdict(SameOriginReason.PORT_DIFFERS)
    return SameOriginVerdict(SameOriginReason.SAME)


@dataclass(frozen=True)
class OriginPolicy:
    wildcard: bool = False
    allowed: FrozenSet[OriginTriple] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.wildcard and self.allowed:
            raise InputError("a wildcard policy takes no allowlist")

    @classmethod
    def allow_all(cls) -> "OriginPolicy":
        return cls(wildcard=True)

    @classmethod
    def allowlist(cls, origins: Iterable[Union[str, OriginTriple]]) -> "OriginPolicy":
        return cls(allowed=frozenset(
            o if isinstance(o, OriginTriple) else parse_origin(o) for o in origins
        ))

    @property
    def mode(self) -> str:
        return "wildcard" if self.wildcard else "allowlist"

    def extended(self, origins: Iterable[OriginTriple]) -> "OriginPolicy":
        if self.wildcard:
            return self
        return OriginPolicy(allowed=self.allowed | frozenset(origins))

    def serialize(self) -> str:
        if self.wildcard:
            return "*"
        return ",".join(sorted(o.serialize() for o in self.allowed))


def is_allowed(policy: OriginPolicy, origin: OriginTriple) -> bool:
    if policy.wildcard:
        return True
    return any(same_origin(entry, origin).same for entry in policy.allowed)


def parse_policy(text: str) -> OriginPolicy:
    """Parse ``*`` or a comma-separated list of origins."""
    text = text.strip()
    if text == "*":
        return OriginPolicy.allow_all()
    return OriginPolicy.allowlist(item for item in text.split(",") if item.strip())
