import random

import pytest

from energymon.crossbar import (
    CrossbarConfigError,
    CrossbarMap,
    RoutingError,
    parse_crossbar_config,
    serialize_crossbar,
)


class TestParse:
    def test_direct_parse(self):
        m = parse_crossbar_config("line 0 -> channel 3\nline 1 -> channel 0")
        assert dict(m.entries) == {0: 3, 1: 0}

    def test_conflict_names_both_lines(self):
        with pytest.raises(CrossbarConfigError) as err:
            parse_crossbar_config("line 0 -> channel 1\nline 2 -> channel 1")
        assert "line 0" in str(err.value) and "line 2" in str(err.value)

    def test_empty_config_is_valid(self):
        m = parse_crossbar_config("")
        assert m.entries == ()
        assert len(m) == 0

    def test_syntax_error_carries_line_number(self):
        with pytest.raises(CrossbarConfigError) as err:
            parse_crossbar_config("line 0 -> channel 1\nwire 1 to 2\n")
        assert "line 2" in str(err.value)

    def test_comments_and_blank_lines(self):
        text = "# header\n\nline 0 -> channel 1  # trailing note\n"
        m = parse_crossbar_config(text)
        assert dict(m.entries) == {0: 1}

    def test_duplicate_line_rejected(self):
        with pytest.raises(CrossbarConfigError):
            parse_crossbar_config("line 0 -> channel 1\nline 0 -> channel 2")

    def test_out_of_range_rejected(self):
        with pytest.raises(CrossbarConfigError):
            parse_crossbar_config("line 0 -> channel 9", channel_count=4)
        with pytest.raises(CrossbarConfigError):
            parse_crossbar_config("line 9 -> channel 0", line_count=4)


class TestRoute:
    def test_mapped_line(self):
        assert CrossbarMap([(0, 3)]).route(0) == 3

    def test_unmapped_line_raises(self):
        with pytest.raises(RoutingError):
            CrossbarMap([(0, 3)]).route(1)

    def test_identity_map(self):
        m = CrossbarMap.identity(16)
        assert m.route(7) == 7
        assert m.line_for_channel(7) == 7

    def test_inverse_lookup_missing(self):
        assert CrossbarMap([(0, 3)]).line_for_channel(0) is None


class TestSerialize:
    def test_canonical_ordering(self):
        m = CrossbarMap([(1, 0), (0, 3)])
        assert serialize_crossbar(m) == "line 0 -> channel 3\nline 1 -> channel 0\n"

    def test_empty(self):
        assert serialize_crossbar(CrossbarMap([])) == ""

    def test_identity_16(self):
        text = serialize_crossbar(CrossbarMap.identity(16))
        lines = text.splitlines()
        assert len(lines) == 16
        assert lines[5] == "line 5 -> channel 5"


def _random_injective_map(rng: random.Random) -> CrossbarMap:
    n = rng.randint(0, 24)
    lines = rng.sample(range(64), n)
    channels = rng.sample(range(64), n)
    return CrossbarMap(zip(lines, channels))


def test_round_trip_property():
    rng = random.Random(1234)
    for _ in range(1000):
        m = _random_injective_map(rng)
        text = serialize_crossbar(m)
        back = parse_crossbar_config(
            text, line_count=m.line_count, channel_count=m.channel_count
        )
        assert back == m
        # counts are inferred when not given; the wiring itself still round-trips
        assert parse_crossbar_config(text).entries == m.entries


def test_non_injective_always_rejected():
    rng = random.Random(99)
    for _ in range(300):
        n = rng.randint(2, 16)
        lines = rng.sample(range(32), n)
        channels = [rng.randrange(4) for _ in range(n)]  # collisions very likely
        has_collision = len(set(channels)) < n
        try:
            CrossbarMap(zip(lines, channels))
        except CrossbarConfigError:
            assert has_collision
        else:
            assert not has_collision
