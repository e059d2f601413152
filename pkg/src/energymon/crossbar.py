"""Configurable crossbar between sensing lines and ADC-side channels.

The measurement board routes its sensing-element lines to the connector
channels through a crossbar configured by a small on-board MCU. Here the
configuration is a text file, one assignment per line::

    # comments allowed
    line 0 -> channel 3
    line 1 -> channel 0

Maps are immutable after construction and safe to share across threads.
Reconfiguration is static: between runs, never mid-run.
"""

from __future__ import annotations

import re
from typing import Iterable


class CrossbarConfigError(ValueError):
    """Syntax error, conflicting assignment, or out-of-range index."""


class RoutingError(LookupError):
    """Route lookup for a line with no configured channel."""


_LINE_RE = re.compile(r"^line\s+(\d+)\s*->\s*channel\s+(\d+)$")


class CrossbarMap:
    """Injective mapping line_index -> channel_index."""

    def __init__(
        self,
        entries: Iterable[tuple[int, int]],
        line_count: int | None = None,
        channel_count: int | None = None,
    ) -> None:
        pairs = sorted((int(l), int(c)) for l, c in entries)
        by_line: dict[int, int] = {}
        by_channel: dict[int, int] = {}
        for line, channel in pairs:
            if line < 0 or channel < 0:
                raise CrossbarConfigError(f"negative index in entry {line} -> {channel}")
            if line in by_line:
                raise CrossbarConfigError(f"line {line} assigned more than once")
            if channel in by_channel:
                raise CrossbarConfigError(
                    f"channel {channel} assigned to both line {by_channel[channel]} "
                    f"and line {line}"
                )
            by_line[line] = channel
            by_channel[channel] = line
        self.entries: tuple[tuple[int, int], ...] = tuple(pairs)
        self.line_count = line_count if line_count is not None else (
            max(by_line, default=-1) + 1
        )
        self.channel_count = channel_count if channel_count is not None else (
            max(by_channel, default=-1) + 1
        )
        for line, channel in pairs:
            if line >= self.line_count:
                raise CrossbarConfigError(
                    f"line {line} out of range (line_count={self.line_count})"
                )
            if channel >= self.channel_count:
                raise CrossbarConfigError(
                    f"channel {channel} out of range (channel_count={self.channel_count})"
                )
        self._by_line = by_line
        self._by_channel = by_channel

    @classmethod
    def identity(cls, n: int) -> "CrossbarMap":
        return cls(((i, i) for i in range(n)), line_count=n, channel_count=n)

    def route(self, line_index: int) -> int:
        """Channel the given sensing line is wired to."""
        try:
            return self._by_line[line_index]
        except KeyError:
            raise RoutingError(f"line {line_index} is not mapped") from None

    def line_for_channel(self, channel_index: int) -> int | None:
        """Inverse lookup; None when the channel has no line behind it."""
        return self._by_channel.get(channel_index)

    def lines(self) -> tuple[int, ...]:
        return tuple(l for l, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CrossbarMap):
            return NotImplemented
        return (
            self.entries == other.entries
            and self.line_count == other.line_count
            and self.channel_count == other.channel_count
        )

    def __hash__(self) -> int:
        return hash((self.entries, self.line_count, self.channel_count))

    def __repr__(self) -> str:
        return f"CrossbarMap({dict(self.entries)!r})"


def parse_crossbar_config(
    text: str,
    line_count: int | None = None,
    channel_count: int | None = None,
) -> CrossbarMap:
    """Parse and validate crossbar config text.

    Raises CrossbarConfigError naming the offending 1-based source line
    on syntax errors, and both colliding lines on conflicts.
    """
    entries: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = _LINE_RE.match(stripped)
        if m is None:
            raise CrossbarConfigError(f"syntax error at line {lineno}: {raw.strip()!r}")
        entries.append((int(m.group(1)), int(m.group(2))))
    return CrossbarMap(entries, line_count=line_count, channel_count=channel_count)


def serialize_crossbar(cmap: CrossbarMap) -> str:
    """Canonical text form, sorted by line index; parse(serialize(m)) == m."""
    return "".join(f"line {l} -> channel {c}\n" for l, c in cmap.entries)
