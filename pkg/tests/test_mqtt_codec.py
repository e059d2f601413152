import random

import pytest

from energymon.mqtt.packets import (
    Connack,
    Connect,
    Disconnect,
    FrameDecoder,
    Pingreq,
    Pingresp,
    ProtocolError,
    Puback,
    Publish,
    Suback,
    Subscribe,
    TopicFilter,
    UnsupportedFeatureError,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
    topic_matches,
)

# boundary vectors for the 1-4 byte varint, verified by the round-trip
# oracle below before being frozen here
VARINT_VECTORS = [
    (0, bytes([0x00])),
    (127, bytes([0x7F])),
    (128, bytes([0x80, 0x01])),
    (16_383, bytes([0xFF, 0x7F])),
    (16_384, bytes([0x80, 0x80, 0x01])),
    (2_097_151, bytes([0xFF, 0xFF, 0x7F])),
    (2_097_152, bytes([0x80, 0x80, 0x80, 0x01])),
    (268_435_455, bytes([0xFF, 0xFF, 0xFF, 0x7F])),
]


class TestRemainingLength:
    @pytest.mark.parametrize("value,encoded", VARINT_VECTORS)
    def test_boundary_vectors(self, value, encoded):
        assert encode_remaining_length(value) == encoded
        assert decode_remaining_length(encoded) == (value, len(encoded))

    def test_brute_force_round_trip(self):
        for n in range(0, 1 << 16):
            data = encode_remaining_length(n)
            assert decode_remaining_length(data) == (n, len(data))

    def test_example_321(self):
        assert decode_remaining_length(bytes([0xC1, 0x02])) == (321, 2)

    def test_truncated_needs_more(self):
        assert decode_remaining_length(b"") is None
        assert decode_remaining_length(bytes([0x80])) is None

    def test_fifth_continuation_byte_malformed(self):
        with pytest.raises(ProtocolError):
            decode_remaining_length(bytes([0xFF, 0xFF, 0xFF, 0xFF, 0x7F]))

    def test_out_of_range_encode(self):
        with pytest.raises(ProtocolError):
            encode_remaining_length(268_435_456)
        with pytest.raises(ProtocolError):
            encode_remaining_length(-1)


class TestPacketExamples:
    def test_pingreq_bytes(self):
        assert encode_packet(Pingreq()) == bytes([0xC0, 0x00])

    def test_pingresp_disconnect_bytes(self):
        assert encode_packet(Pingresp()) == bytes([0xD0, 0x00])
        assert encode_packet(Disconnect()) == bytes([0xE0, 0x00])

    def test_minimal_publish_round_trips(self):
        p = Publish(topic="a", payload=b"b", qos=0)
        decoded, consumed = decode_packet(encode_packet(p))
        assert decoded == p
        assert consumed == len(encode_packet(p))

    def test_connect_layout(self):
        data = encode_packet(Connect(client_id="n1", keepalive_s=30))
        # fixed header, then "MQTT", level 4, clean-session flags, keepalive
        assert data[0] == 0x10
        assert data[2:8] == b"\x00\x04MQTT"
        assert data[8] == 4
        assert data[9] == 0x02
        decoded, _ = decode_packet(data)
        assert decoded == Connect(client_id="n1", keepalive_s=30)

    def test_will_flag_unsupported(self):
        data = bytearray(encode_packet(Connect(client_id="n1")))
        data[9] |= 0x04  # set the will flag
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_username_flag_unsupported(self):
        data = bytearray(encode_packet(Connect(client_id="n1")))
        data[9] |= 0x80
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_persistent_session_unsupported(self):
        data = bytearray(encode_packet(Connect(client_id="n1")))
        data[9] &= ~0x02  # clear clean-session
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_qos2_publish_unsupported(self):
        data = bytearray(encode_packet(Publish(topic="t", payload=b"", qos=0)))
        data[0] |= 0x04  # qos bits -> 2
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_retain_unsupported(self):
        data = bytearray(encode_packet(Publish(topic="t", payload=b"", qos=0)))
        data[0] |= 0x01
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_qos2_subscription_unsupported(self):
        data = bytearray(encode_packet(Subscribe(packet_id=1, filters=(("a/#", 0),))))
        data[-1] = 2  # requested qos byte
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes(data))

    def test_pubrel_unsupported(self):
        with pytest.raises(UnsupportedFeatureError):
            decode_packet(bytes([0x62, 0x02, 0x00, 0x01]))

    def test_invalid_packet_type_zero(self):
        with pytest.raises(ProtocolError):
            decode_packet(bytes([0x00, 0x00]))

    def test_nonzero_flags_rejected(self):
        with pytest.raises(ProtocolError):
            decode_packet(bytes([0xC1, 0x00]))  # pingreq with flags 0001

    def test_qos1_needs_packet_id(self):
        with pytest.raises(ProtocolError):
            Publish(topic="t", payload=b"", qos=1)

    def test_trailing_garbage_rejected(self):
        data = encode_packet(Puback(packet_id=3))
        tampered = bytes([data[0], data[1] + 1]) + data[2:] + b"x"
        with pytest.raises(ProtocolError):
            decode_packet(tampered)


def random_packet(rng: random.Random):
    """Uniformly random valid packet within the supported subset."""
    segment = lambda: "".join(rng.choice("abcxyz019_-") for _ in range(rng.randint(1, 6)))
    topic = lambda: "/".join(segment() for _ in range(rng.randint(1, 4)))
    kind = rng.randrange(9)
    if kind == 0:
        return Connect(client_id=segment(), keepalive_s=rng.randint(0, 0xFFFF))
    if kind == 1:
        return Connack(return_code=rng.randint(0, 5), session_present=rng.random() < 0.5)
    if kind == 2:
        qos = rng.randint(0, 1)
        return Publish(
            topic=topic(),
            payload=rng.randbytes(rng.randint(0, 64)),
            qos=qos,
            packet_id=rng.randint(1, 0xFFFF) if qos else None,
            dup=(qos == 1 and rng.random() < 0.2),
        )
    if kind == 3:
        return Puback(packet_id=rng.randint(1, 0xFFFF))
    if kind == 4:
        filters = []
        for _ in range(rng.randint(1, 4)):
            segs = [segment() if rng.random() < 0.7 else "+" for _ in range(rng.randint(1, 3))]
            if rng.random() < 0.3:
                segs.append("#")
            filters.append(("/".join(segs), rng.randint(0, 1)))
        return Subscribe(packet_id=rng.randint(1, 0xFFFF), filters=tuple(filters))
    if kind == 5:
        granted = tuple(
            rng.choice([0, 1, 0x80]) for _ in range(rng.randint(1, 4))
        )
        return Suback(packet_id=rng.randint(1, 0xFFFF), granted=granted)
    return rng.choice([Pingreq(), Pingresp(), Disconnect()])


def test_codec_round_trip_randomized():
    rng = random.Random(20260810)
    for _ in range(2000):
        packet = random_packet(rng)
        data = encode_packet(packet)
        decoded = decode_packet(data)
        assert decoded is not None
        assert decoded[0] == packet
        assert decoded[1] == len(data)


def test_byte_at_a_time_framing():
    rng = random.Random(5)
    packets = [random_packet(rng) for _ in range(50)]
    for packet in packets:
        data = encode_packet(packet)
        buf = bytearray()
        for i, byte in enumerate(data):
            buf.append(byte)
            decoded = decode_packet(buf)
            if i < len(data) - 1:
                assert decoded is None, f"decoded early at byte {i} of {packet!r}"
            else:
                assert decoded is not None and decoded[0] == packet


def test_frame_decoder_coalesced_stream():
    rng = random.Random(6)
    packets = [random_packet(rng) for _ in range(40)]
    stream = b"".join(encode_packet(p) for p in packets)
    framer = FrameDecoder()
    out = []
    # feed in ragged chunks
    pos = 0
    while pos < len(stream):
        n = rng.randint(1, 17)
        out += framer.feed(stream[pos : pos + n])
        pos += n
    assert out == packets
    assert framer.pending_bytes() == 0


# -- topic matching ----------------------------------------------------------


def brute_force_matches(filter_text: str, topic: str) -> bool:
    """Independent recursive matcher used as the oracle."""

    def match(fsegs, tsegs):
        if not fsegs:
            return not tsegs
        head, *rest = fsegs
        if head == "#":
            return True
        if not tsegs:
            return False
        if head == "+" or head == tsegs[0]:
            return match(rest, tsegs[1:])
        return False

    return match(filter_text.split("/"), topic.split("/"))


class TestTopicMatching:
    @pytest.mark.parametrize(
        "filter_text,topic,expected",
        [
            ("energymon/+/vdd_core", "energymon/node1/vdd_core", True),
            ("energymon/#", "energymon/n1/vdd_soc", True),
            ("a/+", "a/b/c", False),
            ("a/#", "a", True),  # '#' also matches zero remaining segments
            ("+", "a", True),
            ("a/b", "a/b", True),
            ("a/b", "a/c", False),
        ],
    )
    def test_examples_agree_with_oracle(self, filter_text, topic, expected):
        assert brute_force_matches(filter_text, topic) == expected
        assert topic_matches(filter_text, topic) == expected

    def test_randomized_oracle_equivalence(self):
        rng = random.Random(777)
        alphabet = ["a", "b", "c", "energymon", "n1", ""]
        for _ in range(3000):
            fsegs = []
            for _ in range(rng.randint(1, 4)):
                r = rng.random()
                if r < 0.25:
                    fsegs.append("+")
                else:
                    fsegs.append(rng.choice(alphabet))
            if rng.random() < 0.3:
                fsegs.append("#")
            filter_text = "/".join(fsegs)
            topic = "/".join(rng.choice(alphabet) for _ in range(rng.randint(1, 5)))
            try:
                mine = topic_matches(filter_text, topic)
            except ProtocolError:
                continue  # e.g. empty filter from all-empty segments
            assert mine == brute_force_matches(filter_text, topic), (filter_text, topic)

    def test_filter_validation(self):
        with pytest.raises(ProtocolError):
            TopicFilter.parse("a/#/b")
        with pytest.raises(ProtocolError):
            TopicFilter.parse("a/b+")
        with pytest.raises(ProtocolError):
            TopicFilter.parse("a#")
        with pytest.raises(ProtocolError):
            TopicFilter.parse("")
        assert TopicFilter.parse("a/+/#").segments == ("a", "+", "#")
