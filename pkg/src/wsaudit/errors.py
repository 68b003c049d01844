"""Exception hierarchy shared by the protocol core, scanner and lab server."""


class WSAuditError(Exception):
    """Base class for every error raised by this package."""


class InputError(WSAuditError, ValueError):
    """A caller-supplied value is malformed (bad URL, non-ASCII key, ...)."""


class NonceError(WSAuditError):
    """The entropy source could not supply a full nonce."""


class HandshakeParseError(WSAuditError):
    """An HTTP handshake message could not be parsed.

    ``offset`` is the byte offset in the input where parsing failed.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ProtocolError(WSAuditError):
    """A frame stream violates the wire protocol.

    ``rule`` is a short machine-readable name of the violated rule.
    """

    def __init__(self, rule: str, message: str = "") -> None:
        super().__init__(f"{rule}: {message}" if message else rule)
        self.rule = rule


class TransportError(WSAuditError):
    """Connecting to or talking with a remote endpoint failed."""
