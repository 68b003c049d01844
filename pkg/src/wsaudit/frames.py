"""
Sans-I/O WebSocket frame codec.

Wire layout, most significant bit first::

    FIN(1) RSV1-3(3) opcode(4) | MASK(1) len(7) | [len16 | len64] | [key(4)] | payload

Nothing here touches a socket. :class:`FrameDecoder` buffers arbitrary
chunks and yields whole frames; :class:`MessageAssembler` turns a frame
stream into messages, recording control traffic on the side.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

from .errors import ProtocolError

__all__ = [
    "Opcode",
    "Frame",
    "Message",
    "CloseInfo",
    "MAX_PAYLOAD",
    "apply_mask",
    "encode_frame",
    "decode_frame",
    "FrameDecoder",
    "MessageAssembler",
    "Assembled",
    "assemble_messages",
    "parse_close",
    "close_payload",
]

MAX_PAYLOAD = 16 * 1024 * 1024
MAX_CONTROL_PAYLOAD = 125


class Opcode(enum.IntEnum):
    CONTINUATION = 0x0
    TEXT = 0x1
    BINARY = 0x2
    CLOSE = 0x8
    PING = 0x9
    PONG = 0xA

    @property
    def is_control(self) -> bool:
        return self >= 0x8


@dataclass(frozen=True)
class Frame:
    opcode: Opcode
    payload: bytes = b""
    fin: bool = True
    masking_key: Optional[bytes] = None
    rsv: Tuple[bool, bool, bool] = (False, False, False)

    @property
    def masked(self) -> bool:
        return self.masking_key is not None

    def check(self) -> None:
        """Raise ProtocolError if this frame may not appear on the wire."""
        if any(self.rsv):
            raise ProtocolError("rsv-set", "reserved bits must be zero")
        if self.masking_key is not None and len(self.masking_key) != 4:
            raise ProtocolError("bad-mask-key", "masking key must be 4 bytes")
        if Opcode(self.opcode).is_control:
            if len(self.payload) > MAX_CONTROL_PAYLOAD:
                raise ProtocolError("control-too-long",
                                    f"control payload {len(self.payload)} > 125 bytes")
            if not self.fin:
                raise ProtocolError("control-fragmented", "control frames must have FIN set")


@dataclass(frozen=True)
class Message:
    kind: Opcode  # TEXT or BINARY
    data: bytes

    @property
    def text(self) -> str:
        return self.data.decode("utf-8")


@dataclass(frozen=True)
class CloseInfo:
    code: Optional[int] = None
    reason: str = ""


def apply_mask(payload: bytes, key: bytes) -> bytes:
    """XOR ``payload`` with ``key`` repeated; applying it twice is a no-op."""
    if len(key) != 4:
        raise ValueError("masking key must be 4 bytes")
    if not payload:
        return b""
    n = len(payload)
    # Whole-buffer XOR through big ints is much faster than a per-byte loop.
    stream = (key * (n // 4 + 1))[:n]
    return (int.from_bytes(payload, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def encode_frame(frame: Frame) -> bytes:
    frame.check()
    length = len(frame.payload)
    first = (0x80 if frame.fin else 0) | int(frame.opcode)
    mask_bit = 0x80 if frame.masked else 0
    if length <= 125:
        head = struct.pack("!BB", first, mask_bit | length)
    elif length <= 0xFFFF:
        head = struct.pack("!BBH", first, mask_bit | 126, length)
    else:
        head = struct.pack("!BBQ", first, mask_bit | 127, length)
    if frame.masked:
        return head + frame.masking_key + apply_mask(frame.payload, frame.masking_key)
    return head + frame.payload


def decode_frame(data: bytes, max_payload: int = MAX_PAYLOAD) -> Optional[Tuple[Frame, int]]:
    """Decode one frame from the start of ``data``.

    Returns ``(frame, consumed)``, or ``None`` if ``data`` holds only a
    prefix of a frame. Masked payloads come back unmasked, with the key
    kept on the frame.
    """
    if len(data) < 2:
        return None
    b0, b1 = data[0], data[1]
    fin = bool(b0 & 0x80)
    rsv = (bool(b0 & 0x40), bool(b0 & 0x20), bool(b0 & 0x10))
    if any(rsv):
        raise ProtocolError("rsv-set", "reserved bits must be zero")
    try:
        opcode = Opcode(b0 & 0x0F)
    except ValueError:
        raise ProtocolError("reserved-opcode", f"opcode {b0 & 0x0F:#x} is reserved") from None
    masked = bool(b1 & 0x80)
    length = b1 & 0x7F
    pos = 2
    if length == 126:
        if len(data) < 4:
            return None
        (length,) = struct.unpack_from("!H", data, 2)
        pos = 4
    elif length == 127:
        if len(data) < 10:
            return None
        (length,) = struct.unpack_from("!Q", data, 2)
        if length >> 63:
            raise ProtocolError("length-high-bit", "64-bit length has its top bit set")
        pos = 10
    if opcode.is_control:
        if not fin:
            raise ProtocolError("control-fragmented", "control frames must have FIN set")
        if length > MAX_CONTROL_PAYLOAD:
            raise ProtocolError("control-too-long", f"control payload {length} > 125 bytes")
    if length > max_payload:
        raise ProtocolError("payload-too-long", f"declared length {length} > {max_payload}")
    key = None
    if masked:
        if len(data) < pos + 4:
            return None
        key = bytes(data[pos:pos + 4])
        pos += 4
    end = pos + length
    if len(data) < end:
        return None
    payload = bytes(data[pos:end])
    if key is not None:
        payload = apply_mask(payload, key)
    return Frame(opcode=opcode, payload=payload, fin=fin, masking_key=key), end


def _frame_size(data: bytes) -> Optional[int]:
    """Total size of the frame at the start of ``data`` once its header is in."""
    if len(data) < 2:
        return None
    masked, length = data[1] & 0x80, data[1] & 0x7F
    pos = 2
    if length == 126:
        if len(data) < 4:
            return None
        (length,) = struct.unpack_from("!H", data, 2)
        pos = 4
    elif length == 127:
        if len(data) < 10:
            return None
        (length,) = struct.unpack_from("!Q", data, 2)
        pos = 10
    return pos + (4 if masked else 0) + length


class FrameDecoder:
    """Incremental decoder: ``feed`` bytes as they arrive, get whole frames back."""

    def __init__(self, max_payload: int = MAX_PAYLOAD) -> None:
        self.max_payload = max_payload
        self._buffer = bytearray()
        self._need = 2

    def feed(self, data: bytes) -> List[Frame]:
        self._buffer += data
        frames = []
        while len(self._buffer) >= self._need:
            result = decode_frame(self._buffer, self.max_payload)
            if result is None:
                self._need = _frame_size(self._buffer) or len(self._buffer) + 1
                break
            frame, consumed = result
            del self._buffer[:consumed]
            frames.append(frame)
            self._need = 2
        return frames

    @property
    def pending(self) -> int:
        return len(self._buffer)


def close_payload(code: Optional[int] = None, reason: str = "") -> bytes:
    if code is None:
        return b""
    return struct.pack("!H", code) + reason.encode("utf-8")


def parse_close(payload: bytes) -> CloseInfo:
    if not payload:
        return CloseInfo()
    if len(payload) == 1:
        raise ProtocolError("bad-close-payload", "close payload of one byte")
    (code,) = struct.unpack_from("!H", payload)
    try:
        reason = payload[2:].decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError("invalid-utf8", "close reason is not UTF-8") from None
    return CloseInfo(code, reason)


@dataclass
class Assembled:
    messages: List[Message] = field(default_factory=list)
    close: Optional[CloseInfo] = None
    pings: List[bytes] = field(default_factory=list)
    pongs: List[bytes] = field(default_factory=list)


class MessageAssembler:
    """Reassemble fragmented data frames; one instance per stream direction.

    Control frames may arrive between fragments and never join a chain.
    Text is validated as UTF-8 only once the message is complete.
    """

    def __init__(self) -> None:
        self.result = Assembled()
        self._kind: Optional[Opcode] = None
        self._parts: List[bytes] = []

    def feed(self, frame: Frame) -> Optional[Message]:
        """Consume one frame; return the message it completes, if any."""
        op = frame.opcode
        if op == Opcode.PING:
            self.result.pings.append(frame.payload)
            return None
        if op == Opcode.PONG:
            self.result.pongs.append(frame.payload)
            return None
        if op == Opcode.CLOSE:
            self.result.close = parse_close(frame.payload)
            return None
        if op == Opcode.CONTINUATION:
            if self._kind is None:
                raise ProtocolError("orphan-continuation", "continuation with no open message")
        else:
            if self._kind is not None:
                raise ProtocolError("interleaved-data", "new data frame while a message is open")
            self._kind = op
        self._parts.append(frame.payload)
        if not frame.fin:
            return None
        kind, data = self._kind, b"".join(self._parts)
        self._kind, self._parts = None, []
        if kind == Opcode.TEXT:
            try:
                data.decode("utf-8")
            except UnicodeDecodeError:
                raise ProtocolError("invalid-utf8", "text message is not UTF-8") from None
        message = Message(kind, data)
        self.result.messages.append(message)
        return message

    @property
    def in_message(self) -> bool:
        return self._kind is not None


def assemble_messages(frames: Iterable[Frame]) -> Assembled:
    assembler = MessageAssembler()
    for frame in frames:
        assembler.feed(frame)
    return assembler.result
