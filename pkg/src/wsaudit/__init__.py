"""WebSocket attack-surface auditor.

Protocol core (handshake, frames, origin), a scanner for handshake-level
weaknesses, and a lab server exposing vulnerable and hardened targets.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    HandshakeParseError,
    InputError,
    NonceError,
    ProtocolError,
    TransportError,
    WSAuditError,
)
from .handshake import GUID, compute_accept, generate_nonce  # noqa: E402
from .origin import parse_origin, same_origin  # noqa: E402
