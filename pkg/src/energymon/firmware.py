"""Bare-metal runtime monitor emulation.

The monitor core polls the memory-mapped register bank, converts raw
averaged codes back into physical currents and voltages (inverting the
sensing chain: the shunt value, conditioner gain/offset and divider
ratio are known), and forwards the results to the application side
through a bounded mailbox.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional

from .avgfsm import RegisterBank
from .sensing import AdcSpec, ChannelKind, ChannelSpec, KindMismatchError


@dataclass(frozen=True)
class PhysicalSample:
    """Reconstructed rail quantity for one averaging window."""

    rail_name: str
    kind: ChannelKind
    value: float  # amps for current channels, volts for voltage channels
    t_ns: int
    window_ns: int
    seq: int


def code_to_adc_voltage(code: int, adc: AdcSpec) -> float:
    """Inverse of the floor quantizer's code->voltage map (no half-LSB offset)."""
    return code * adc.vref_v / (1 << adc.bits)


def reconstruct_current(code: int, spec: ChannelSpec, adc: AdcSpec) -> float:
    """Averaged code back to amps through the known shunt and conditioner."""
    if spec.kind is not ChannelKind.CURRENT:
        raise KindMismatchError(
            f"channel {spec.channel_id} ({spec.rail_name}) is not a current channel"
        )
    i = (code_to_adc_voltage(code, adc) - spec.cond_offset_v) / spec.cond_gain / spec.r_shunt_ohm
    return max(i, 0.0)


def reconstruct_voltage(code: int, spec: ChannelSpec, adc: AdcSpec) -> float:
    """Averaged code back to rail volts through the divider ratio."""
    if spec.kind is not ChannelKind.VOLTAGE:
        raise KindMismatchError(
            f"channel {spec.channel_id} ({spec.rail_name}) is not a voltage channel"
        )
    return code_to_adc_voltage(code, adc) / spec.divider_ratio


class Mailbox:
    """Bounded FIFO between the monitor core and the collector service.

    Safe for one producer and one consumer on different threads. A push
    into a full mailbox evicts the oldest entry and counts it; drops are
    never raised.
    """

    def __init__(self, capacity: int = 1024) -> None:
        if capacity < 1:
            raise ValueError(f"mailbox capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[PhysicalSample] = deque()
        self._lock = threading.Lock()
        self._dropped = 0

    def push(self, sample: PhysicalSample) -> None:
        with self._lock:
            if len(self._items) == self.capacity:
                self._items.popleft()
                self._dropped += 1
            self._items.append(sample)

    def pop(self) -> Optional[PhysicalSample]:
        with self._lock:
            return self._items.popleft() if self._items else None

    def dropped(self) -> int:
        return self._dropped

    def __len__(self) -> int:
        return len(self._items)


class RuntimeMonitor:
    """Seq-gated register poller.

    Each register update is forwarded at most once: a channel is only
    converted and pushed when its sequence counter advanced past the
    last value this monitor saw. Polling at a period <= the averaging
    period therefore never duplicates and never misses an update.
    """

    def __init__(
        self,
        bank: RegisterBank,
        channel_table: Mapping[int, ChannelSpec],
        adc: AdcSpec,
        window_ns: int,
        mailbox: Mailbox,
    ) -> None:
        self._bank = bank
        self._table = dict(channel_table)
        self._adc = adc
        self._window_ns = window_ns
        self._mailbox = mailbox
        self._last_seq = {ch: 0 for ch in self._table}
        self.forwarded_count = 0
        self.negative_floor_count = 0

    def poll_once(self) -> int:
        """Forward one PhysicalSample per channel whose register advanced."""
        forwarded = 0
        for ch, spec in self._table.items():
            val = self._bank.read(ch)
            if val.seq == 0 or val.seq <= self._last_seq[ch]:
                continue
            self._last_seq[ch] = val.seq
            if spec.kind is ChannelKind.CURRENT:
                if code_to_adc_voltage(val.avg_code, self._adc) < spec.cond_offset_v:
                    self.negative_floor_count += 1
                value = reconstruct_current(val.avg_code, spec, self._adc)
            else:
                value = reconstruct_voltage(val.avg_code, spec, self._adc)
            self._mailbox.push(
                PhysicalSample(spec.rail_name, spec.kind, value, val.t_ns,
                               self._window_ns, val.seq)
            )
            forwarded += 1
        self.forwarded_count += forwarded
        return forwarded
