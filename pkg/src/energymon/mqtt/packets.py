"""MQTT 3.1.1 packet codec for the supported subset.

Wire layout follows the MQTT 3.1.1 standard bit for bit: a fixed header
(packet type in the high nibble of the first byte, flags in the low
nibble, then the remaining length as a 1-4 byte base-128 varint),
followed by the variable header and payload. Strings are UTF-8 with a
big-endian 16-bit length prefix.

Decoding is incremental: ``decode_packet`` returns None until a whole
packet is buffered. Valid MQTT outside the subset (QoS 2, retained
messages, wills, persistent sessions, user/password auth) raises
UnsupportedFeatureError; malformed framing raises ProtocolError.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

MAX_REMAINING_LENGTH = 268_435_455

CONNECT = 1
CONNACK = 2
PUBLISH = 3
PUBACK = 4
PUBREC = 5
PUBREL = 6
PUBCOMP = 7
SUBSCRIBE = 8
SUBACK = 9
UNSUBSCRIBE = 10
UNSUBACK = 11
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14

SUBACK_FAILURE = 0x80

CONNACK_ACCEPTED = 0
CONNACK_REFUSED_PROTOCOL = 1
CONNACK_REFUSED_IDENTIFIER = 2
CONNACK_REFUSED_UNAVAILABLE = 3


class ProtocolError(ValueError):
    """Malformed MQTT wire data."""


class UnsupportedFeatureError(ProtocolError):
    """Well-formed MQTT outside the supported subset."""


def _check_packet_id(packet_id: int) -> None:
    if not 1 <= packet_id <= 0xFFFF:
        raise ProtocolError(f"packet id must be in [1, 65535], got {packet_id}")


def _check_topic(topic: str) -> None:
    if not topic:
        raise ProtocolError("publish topic must be non-empty")
    if "+" in topic or "#" in topic:
        raise ProtocolError(f"publish topic must not contain wildcards: {topic!r}")


@dataclass(frozen=True)
class TopicFilter:
    """Subscription filter: literal segments, '+', or a trailing '#'."""

    segments: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ProtocolError("topic filter must have at least one segment")
        for i, seg in enumerate(self.segments):
            if seg == "#":
                if i != len(self.segments) - 1:
                    raise ProtocolError("'#' is only allowed as the final segment")
            elif "#" in seg or (seg != "+" and "+" in seg):
                raise ProtocolError(
                    f"wildcard must occupy a whole segment: {seg!r}"
                )

    @classmethod
    def parse(cls, text: str) -> "TopicFilter":
        if not text:
            raise ProtocolError("topic filter must be non-empty")
        return cls(tuple(text.split("/")))

    def matches(self, topic: str) -> bool:
        """MQTT 3.1.1 matching: '+' is exactly one segment, '#' the remainder."""
        tsegs = topic.split("/")
        for i, fseg in enumerate(self.segments):
            if fseg == "#":
                return True
            if i >= len(tsegs):
                return False
            if fseg != "+" and fseg != tsegs[i]:
                return False
        return len(tsegs) == len(self.segments)

    def __str__(self) -> str:
        return "/".join(self.segments)


def topic_matches(filter_: "TopicFilter | str", topic: str) -> bool:
    if isinstance(filter_, str):
        filter_ = TopicFilter.parse(filter_)
    return filter_.matches(topic)


@dataclass(frozen=True)
class Connect:
    client_id: str
    keepalive_s: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.keepalive_s <= 0xFFFF:
            raise ProtocolError(f"keepalive out of range: {self.keepalive_s}")


@dataclass(frozen=True)
class Connack:
    return_code: int = CONNACK_ACCEPTED
    session_present: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.return_code <= 5:
            raise ProtocolError(f"connack return code out of range: {self.return_code}")


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False

    def __post_init__(self) -> None:
        _check_topic(self.topic)
        if self.qos not in (0, 1):
            raise UnsupportedFeatureError(f"QoS {self.qos} is outside the subset")
        if self.qos == 1:
            if self.packet_id is None:
                raise ProtocolError("QoS 1 publish requires a packet id")
            _check_packet_id(self.packet_id)
        else:
            if self.packet_id is not None:
                raise ProtocolError("QoS 0 publish must not carry a packet id")
            if self.dup:
                raise ProtocolError("DUP must be 0 on a QoS 0 publish")
        if not isinstance(self.payload, (bytes, bytearray)):
            raise ProtocolError("publish payload must be bytes")


@dataclass(frozen=True)
class Puback:
    packet_id: int

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    filters: tuple[tuple[str, int], ...]  # (topic filter, requested qos)

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)
        if not self.filters:
            raise ProtocolError("subscribe must carry at least one filter")
        for text, qos in self.filters:
            TopicFilter.parse(text)
            if qos not in (0, 1):
                raise UnsupportedFeatureError(f"subscription QoS {qos} is outside the subset")


@dataclass(frozen=True)
class Suback:
    packet_id: int
    granted: tuple[int, ...]  # per-filter granted qos, or 0x80 for failure

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)
        if not self.granted:
            raise ProtocolError("suback must carry at least one return code")
        for code in self.granted:
            if code not in (0, 1, SUBACK_FAILURE):
                raise UnsupportedFeatureError(f"suback return code {code:#x} unsupported")


@dataclass(frozen=True)
class Pingreq:
    pass


@dataclass(frozen=True)
class Pingresp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


MqttPacket = Union[
    Connect, Connack, Publish, Puback, Subscribe, Suback, Pingreq, Pingresp, Disconnect
]


def encode_remaining_length(n: int) -> bytes:
    """Base-128 varint with continuation bit, 1-4 bytes."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise ProtocolError(f"remaining length out of range: {n}")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        out.append(digit | 0x80 if n else digit)
        if not n:
            return bytes(out)


def decode_remaining_length(data: bytes | bytearray, offset: int = 0) -> tuple[int, int] | None:
    """Returns (value, bytes consumed), or None when more bytes are needed."""
    n = 0
    shift = 0
    for i in range(4):
        if offset + i >= len(data):
            return None
        b = data[offset + i]
        n |= (b & 0x7F) << shift
        if not b & 0x80:
            return n, i + 1
        shift += 7
    raise ProtocolError("malformed remaining length (more than 4 bytes)")


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError(f"string too long for a 16-bit length prefix: {len(raw)}")
    return struct.pack("!H", len(raw)) + raw


class _Reader:
    """Cursor over a packet body; every read checks for truncation."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("packet body truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid UTF-8 string: {exc}") from exc

    def rest(self) -> bytes:
        out = self.data[self.pos :]
        self.pos = len(self.data)
        return out

    def at_end(self) -> bool:
        return self.pos == len(self.data)


def encode_packet(packet: MqttPacket) -> bytes:
    """Bit-exact MQTT 3.1.1 encoding of a subset packet."""
    if isinstance(packet, Connect):
        body = (
            _encode_str("MQTT")
            + bytes([4, 0x02])  # protocol level 4, clean-session flag only
            + struct.pack("!H", packet.keepalive_s)
            + _encode_str(packet.client_id)
        )
        return _frame(CONNECT, 0, body)
    if isinstance(packet, Connack):
        body = bytes([1 if packet.session_present else 0, packet.return_code])
        return _frame(CONNACK, 0, body)
    if isinstance(packet, Publish):
        flags = (packet.dup << 3) | (packet.qos << 1)
        body = _encode_str(packet.topic)
        if packet.qos == 1:
            body += struct.pack("!H", packet.packet_id)
        body += bytes(packet.payload)
        return _frame(PUBLISH, flags, body)
    if isinstance(packet, Puback):
        return _frame(PUBACK, 0, struct.pack("!H", packet.packet_id))
    if isinstance(packet, Subscribe):
        body = struct.pack("!H", packet.packet_id)
        for text, qos in packet.filters:
            body += _encode_str(text) + bytes([qos])
        return _frame(SUBSCRIBE, 0x02, body)
    if isinstance(packet, Suback):
        body = struct.pack("!H", packet.packet_id) + bytes(packet.granted)
        return _frame(SUBACK, 0, body)
    if isinstance(packet, Pingreq):
        return b"\xc0\x00"
    if isinstance(packet, Pingresp):
        return b"\xd0\x00"
    if isinstance(packet, Disconnect):
        return b"\xe0\x00"
    raise TypeError(f"not an MQTT packet: {packet!r}")


def _frame(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def decode_packet(data: bytes | bytearray) -> tuple[MqttPacket, int] | None:
    """Decode one packet from the head of ``data``.

    Returns (packet, bytes consumed), or None when the buffer does not
    yet hold a complete packet.
    """
    if len(data) < 1:
        return None
    ptype = data[0] >> 4
    flags = data[0] & 0x0F
    rl = decode_remaining_length(data, 1)
    if rl is None:
        return None
    remaining, rl_len = rl
    total = 1 + rl_len + remaining
    if len(data) < total:
        return None
    body = bytes(data[1 + rl_len : total])
    return _decode_body(ptype, flags, body), total


def _decode_body(ptype: int, flags: int, body: bytes) -> MqttPacket:
    if ptype == PUBLISH:
        return _decode_publish(flags, body)
    if ptype in (PUBREC, PUBREL, PUBCOMP):
        raise UnsupportedFeatureError("QoS 2 flow is outside the subset")
    if ptype in (UNSUBSCRIBE, UNSUBACK):
        raise UnsupportedFeatureError("unsubscribe is outside the subset")
    if ptype == SUBSCRIBE:
        if flags != 0x02:
            raise ProtocolError(f"subscribe fixed-header flags must be 0010, got {flags:#x}")
    elif flags != 0:
        raise ProtocolError(f"fixed-header flags must be 0 for packet type {ptype}")
    r = _Reader(body)
    if ptype == CONNECT:
        packet = _decode_connect(r)
    elif ptype == CONNACK:
        ack_flags = r.u8()
        if ack_flags & ~0x01:
            raise ProtocolError(f"reserved connack flags set: {ack_flags:#x}")
        packet = Connack(return_code=r.u8(), session_present=bool(ack_flags & 0x01))
    elif ptype == PUBACK:
        packet = Puback(packet_id=r.u16())
    elif ptype == SUBSCRIBE:
        packet = _decode_subscribe(r)
    elif ptype == SUBACK:
        packet_id = r.u16()
        granted = tuple(r.rest())
        packet = Suback(packet_id=packet_id, granted=granted)
    elif ptype == PINGREQ:
        packet = Pingreq()
    elif ptype == PINGRESP:
        packet = Pingresp()
    elif ptype == DISCONNECT:
        packet = Disconnect()
    else:
        raise ProtocolError(f"invalid packet type {ptype}")
    if not r.at_end():
        raise ProtocolError(f"{len(body) - r.pos} trailing bytes in packet body")
    return packet


def _decode_connect(r: _Reader) -> Connect:
    name = r.string()
    level = r.u8()
    if name != "MQTT" or level != 4:
        raise UnsupportedFeatureError(
            f"only MQTT 3.1.1 is supported (protocol {name!r} level {level})"
        )
    cflags = r.u8()
    if cflags & 0x01:
        raise ProtocolError("reserved connect flag must be 0")
    if cflags & 0x04 or cflags & 0x18 or cflags & 0x20:
        raise UnsupportedFeatureError("will messages are outside the subset")
    if cflags & 0xC0:
        raise UnsupportedFeatureError("username/password auth is outside the subset")
    if not cflags & 0x02:
        raise UnsupportedFeatureError("persistent sessions are outside the subset")
    keepalive = r.u16()
    client_id = r.string()
    return Connect(client_id=client_id, keepalive_s=keepalive)


def _decode_publish(flags: int, body: bytes) -> Publish:
    dup = bool(flags & 0x08)
    qos = (flags >> 1) & 0x03
    retain = bool(flags & 0x01)
    if qos == 3:
        raise ProtocolError("publish QoS bits must not both be set")
    if qos == 2:
        raise UnsupportedFeatureError("QoS 2 is outside the subset")
    if retain:
        raise UnsupportedFeatureError("retained messages are outside the subset")
    r = _Reader(body)
    topic = r.string()
    packet_id = r.u16() if qos == 1 else None
    return Publish(topic=topic, payload=r.rest(), qos=qos, packet_id=packet_id, dup=dup)


def _decode_subscribe(r: _Reader) -> Subscribe:
    packet_id = r.u16()
    filters: list[tuple[str, int]] = []
    while not r.at_end():
        text = r.string()
        qos = r.u8()
        if qos == 2:
            raise UnsupportedFeatureError("subscription QoS 2 is outside the subset")
        if qos > 2:
            raise ProtocolError(f"invalid requested QoS {qos}")
        filters.append((text, qos))
    if not filters:
        raise ProtocolError("subscribe must carry at least one filter")
    return Subscribe(packet_id=packet_id, filters=tuple(filters))


class FrameDecoder:
    """Incremental packet framer for a byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[MqttPacket]:
        """Append stream bytes; returns every packet completed by them."""
        self._buf.extend(data)
        packets: list[MqttPacket] = []
        while True:
            decoded = decode_packet(self._buf)
            if decoded is None:
                return packets
            packet, consumed = decoded
            del self._buf[:consumed]
            packets.append(packet)

    def pending_bytes(self) -> int:
        return len(self._buf)
