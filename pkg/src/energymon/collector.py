"""User-space energy collector service.

Drains the monitor mailbox, pairs each current sample with the nearest
voltage sample of its rail, computes per-window energy E = I * V * dt,
keeps per-rail running totals, and publishes one telemetry record per
current sample.

Wire contract (part of the external interface): topic
``energymon/<node>/<rail>``; payload is a single-line JSON object with
exactly the keys ``node, rail, ts_ns, i_a, v_v, e_j, window_ns, seq``
in that order, numbers in shortest round-trip decimal form.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .firmware import Mailbox, PhysicalSample
from .sensing import ChannelKind, ChannelSpec

PAYLOAD_FIELDS = ("node", "rail", "ts_ns", "i_a", "v_v", "e_j", "window_ns", "seq")

_RESERVED = set("/+#")


class EncodingError(ValueError):
    """Record cannot be represented on the wire (bad topic segment)."""


class RecordDecodeError(ValueError):
    """Payload is not a valid telemetry record."""


def valid_topic_segment(s: str) -> bool:
    return bool(s) and not any(c in _RESERVED or c.isspace() for c in s)


@dataclass(frozen=True)
class EnergyRecord:
    """Energy of one averaging window on one rail.

    ``v_is_nominal`` marks records whose voltage came from the rail's
    nominal fallback instead of a measured sample; it is local metadata
    and not part of the wire payload.
    """

    node_id: str
    rail_name: str
    t_ns: int
    i_amps: float
    v_volts: float
    e_joules: float
    window_ns: int
    seq: int
    v_is_nominal: bool = False


@dataclass
class RailAccumulator:
    rail_name: str
    total_joules: float = 0.0
    sample_count: int = 0
    first_t_ns: int | None = None
    last_t_ns: int | None = None

    def add(self, record: EnergyRecord) -> None:
        self.total_joules += record.e_joules
        self.sample_count += 1
        if self.first_t_ns is None:
            self.first_t_ns = record.t_ns
        self.last_t_ns = record.t_ns


def energy_of(i_amps: float, v_volts: float, window_ns: int) -> float:
    """Rectangular-window energy in joules."""
    if i_amps < 0 or v_volts < 0 or window_ns < 0:
        raise ValueError("energy inputs must be >= 0")
    return i_amps * v_volts * window_ns * 1e-9


def pair_voltage(
    current_sample: PhysicalSample,
    voltage_window: Sequence[PhysicalSample],
    spec: ChannelSpec,
) -> tuple[float, bool]:
    """Voltage to pair with a current sample.

    Picks the same-rail voltage sample with the smallest timestamp
    distance within +/- one averaging window, breaking ties toward the
    past; falls back to the rail's nominal voltage (flagged True) when
    no candidate exists. ``voltage_window`` must be sorted by t_ns.
    """
    best_v = None
    best_dt = None
    for vs in voltage_window:
        dt = abs(vs.t_ns - current_sample.t_ns)
        if dt > current_sample.window_ns:
            continue
        # ascending t_ns: on a tie the earlier candidate is already held
        if best_dt is None or dt < best_dt:
            best_dt = dt
            best_v = vs.value
    if best_v is None:
        return spec.nominal_voltage_v, True
    return best_v, False


def encode_record(record: EnergyRecord) -> tuple[str, bytes]:
    """Record to (topic, single-line JSON payload)."""
    for label, segment in (("node", record.node_id), ("rail", record.rail_name)):
        if not valid_topic_segment(segment):
            raise EncodingError(
                f"{label} {segment!r} is not a valid topic segment "
                f"(no '/', '+', '#', or whitespace; non-empty)"
            )
    topic = f"energymon/{record.node_id}/{record.rail_name}"
    payload = json.dumps(
        {
            "node": record.node_id,
            "rail": record.rail_name,
            "ts_ns": record.t_ns,
            "i_a": record.i_amps,
            "v_v": record.v_volts,
            "e_j": record.e_joules,
            "window_ns": record.window_ns,
            "seq": record.seq,
        },
        separators=(",", ":"),
    ).encode("utf-8")
    return topic, payload


def decode_record(payload: bytes) -> EnergyRecord:
    """Inverse of encode_record; raises RecordDecodeError on malformed input."""
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordDecodeError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != set(PAYLOAD_FIELDS):
        raise RecordDecodeError(f"payload fields must be exactly {PAYLOAD_FIELDS}")
    try:
        return EnergyRecord(
            node_id=str(obj["node"]),
            rail_name=str(obj["rail"]),
            t_ns=int(obj["ts_ns"]),
            i_amps=float(obj["i_a"]),
            v_volts=float(obj["v_v"]),
            e_joules=float(obj["e_j"]),
            window_ns=int(obj["window_ns"]),
            seq=int(obj["seq"]),
        )
    except (TypeError, ValueError) as exc:
        raise RecordDecodeError(f"bad field value: {exc}") from exc


class Publisher(Protocol):
    def publish(self, topic: str, payload: bytes) -> None: ...


class EnergyCollector:
    """Per-node collector loop.

    Publish failures never lose records silently: encoded messages wait
    in a bounded in-order retry buffer (drop-oldest beyond
    ``retry_capacity``, counted) and are flushed before newer traffic.
    """

    #: voltage samples retained per rail for pairing
    VOLTAGE_WINDOW_LEN = 8

    def __init__(
        self,
        node_id: str,
        mailbox: Mailbox,
        publisher: Publisher,
        rail_specs: Mapping[str, ChannelSpec],
        retry_capacity: int = 10_000,
    ) -> None:
        self.node_id = node_id
        self._mailbox = mailbox
        self._publisher = publisher
        self._rail_specs = dict(rail_specs)
        self._voltages: dict[str, deque[PhysicalSample]] = {}
        self.accumulators: dict[str, RailAccumulator] = {}
        self._outbox: deque[tuple[str, bytes]] = deque()
        self._retry_capacity = retry_capacity
        self.published_count = 0
        self.publish_failure_count = 0
        self.retry_dropped_count = 0
        self.nominal_pairing_count = 0

    def tick(self, now_ns: int) -> int:
        """Drain the mailbox, account energy, publish; returns records published."""
        drained: list[PhysicalSample] = []
        while (s := self._mailbox.pop()) is not None:
            drained.append(s)
        # voltages first so currents drained in the same tick can pair with them
        for s in drained:
            if s.kind is ChannelKind.VOLTAGE:
                window = self._voltages.setdefault(
                    s.rail_name, deque(maxlen=self.VOLTAGE_WINDOW_LEN)
                )
                window.append(s)
        for s in drained:
            if s.kind is not ChannelKind.CURRENT:
                continue
            spec = self._rail_specs[s.rail_name]
            v_volts, nominal = pair_voltage(
                s, self._voltages.get(s.rail_name, ()), spec
            )
            if nominal:
                self.nominal_pairing_count += 1
            record = EnergyRecord(
                node_id=self.node_id,
                rail_name=s.rail_name,
                t_ns=s.t_ns,
                i_amps=s.value,
                v_volts=v_volts,
                e_joules=energy_of(s.value, v_volts, s.window_ns),
                window_ns=s.window_ns,
                seq=s.seq,
                v_is_nominal=nominal,
            )
            acc = self.accumulators.get(s.rail_name)
            if acc is None:
                acc = self.accumulators[s.rail_name] = RailAccumulator(s.rail_name)
            acc.add(record)
            self._enqueue(encode_record(record))
        return self._flush()

    def _enqueue(self, message: tuple[str, bytes]) -> None:
        if len(self._outbox) >= self._retry_capacity:
            self._outbox.popleft()
            self.retry_dropped_count += 1
        self._outbox.append(message)

    def _flush(self) -> int:
        sent = 0
        while self._outbox:
            topic, payload = self._outbox[0]
            try:
                self._publisher.publish(topic, payload)
            except Exception:
                self.publish_failure_count += 1
                break
            self._outbox.popleft()
            sent += 1
        self.published_count += sent
        return sent

    def pending(self) -> int:
        return len(self._outbox)
