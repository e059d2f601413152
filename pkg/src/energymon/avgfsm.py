"""FPGA-side averaging logic.

A bank of A ADCs digitizes A channels in lockstep, one conversion every
t_sample_min_ns of virtual time. Each ADC serves N channels through a
multiplexer: the selected channel is sampled k_window consecutive
conversions, the truncated integer mean is latched into the register
bank together with the timestamp of the final contributing conversion,
and the mux advances round-robin. The steady-state update period per
channel is therefore t_sample_min_ns * k_window * n_channels_per_adc.

The FSM advances single-threaded; the register bank supports one writer
and any number of concurrent readers through a version-validated
double-read protocol (the software analogue of a multi-word hardware
snapshot register).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from .sensing import AdcSpec, ChannelConfigError


class FsmStepError(RuntimeError):
    """The raw-sample source failed for the currently selected channel."""


@dataclass(frozen=True)
class FsmConfig:
    k_window: int = 16
    n_channels_per_adc: int = 8
    adc_count: int = 2
    adc: AdcSpec = AdcSpec()

    def __post_init__(self) -> None:
        if self.k_window < 1:
            raise ChannelConfigError(f"k_window must be >= 1, got {self.k_window}")
        if self.n_channels_per_adc < 1:
            raise ChannelConfigError(
                f"n_channels_per_adc must be >= 1, got {self.n_channels_per_adc}"
            )
        if self.adc_count < 1:
            raise ChannelConfigError(f"adc_count must be >= 1, got {self.adc_count}")

    @property
    def total_channels(self) -> int:
        return self.adc_count * self.n_channels_per_adc


def t_avg(config: FsmConfig) -> int:
    """Virtual-time period between consecutive averaged samples of one channel."""
    return config.adc.t_sample_min_ns * config.k_window * config.n_channels_per_adc


@dataclass(frozen=True)
class AveragedSample:
    channel_id: int
    avg_code: int
    t_ns: int
    seq: int


class RegisterValue(NamedTuple):
    """Coherent register snapshot; seq == 0 means the channel never latched."""

    avg_code: int
    t_ns: int
    seq: int


class _Register:
    __slots__ = ("version", "avg_code", "t_ns", "seq")

    def __init__(self) -> None:
        self.version = 0  # odd while a write is in flight
        self.avg_code = 0
        self.t_ns = 0
        self.seq = 0


class RegisterBank:
    """Per-channel latched (avg_code, t_ns, seq) triples.

    Register widths mirror the modeled hardware: 32-bit average, 64-bit
    nanosecond timestamp, 32-bit sequence counter.
    """

    def __init__(self, channel_ids: Iterable[int]) -> None:
        self._regs = {int(ch): _Register() for ch in channel_ids}

    def channel_ids(self) -> tuple[int, ...]:
        return tuple(self._regs)

    def latch(self, channel_id: int, avg_code: int, t_ns: int, seq: int) -> None:
        """Single-writer publish of a new averaged sample."""
        reg = self._regs[channel_id]
        reg.version += 1
        reg.avg_code = avg_code
        reg.t_ns = t_ns
        reg.seq = seq
        reg.version += 1

    def read(self, channel_id: int) -> RegisterValue:
        """Torn-read-free snapshot; retries while the writer is mid-update."""
        try:
            reg = self._regs[channel_id]
        except KeyError:
            raise KeyError(f"no register for channel {channel_id}") from None
        while True:
            v1 = reg.version
            snap = RegisterValue(reg.avg_code, reg.t_ns, reg.seq)
            if reg.version == v1 and v1 % 2 == 0:
                return snap

    def clear(self) -> None:
        for reg in self._regs.values():
            reg.version += 1
            reg.avg_code = 0
            reg.t_ns = 0
            reg.seq = 0
            reg.version += 1


# Raw-sample source: (channel_id, t_ns) -> ADC code for that conversion.
Sampler = Callable[[int, int], int]


class AvgSampleFsm:
    """Steps the averaging schedule one conversion at a time.

    Channel layout is fixed: ADC a serves channels [a*N, (a+1)*N). All
    ADCs advance in lockstep, so one step performs adc_count conversions
    and advances virtual time by exactly t_sample_min_ns. A conversion
    started at T is stamped at its completion time T + t_sample_min_ns.
    """

    def __init__(self, config: FsmConfig, bank: RegisterBank | None = None,
                 start_ns: int = 0) -> None:
        self.config = config
        self.bank = bank if bank is not None else RegisterBank(range(config.total_channels))
        self._seq = [0] * config.total_channels
        self._acc = [0] * config.adc_count
        self.now_ns = start_ns
        self._mux_pos = 0
        self._in_window = 0
        self._start_ns = start_ns

    def reset(self, start_ns: int | None = None) -> None:
        """Clear accumulators and sequence counters; mux back to channel 0."""
        if start_ns is not None:
            self._start_ns = start_ns
        self.now_ns = self._start_ns
        self._mux_pos = 0
        self._in_window = 0
        self._acc = [0] * self.config.adc_count
        self._seq = [0] * self.config.total_channels
        self.bank.clear()

    def step(self, sampler: Sampler) -> list[AveragedSample]:
        """Advance one conversion; returns the samples latched by this step.

        The list is empty except on the k_window-th conversion of a mux
        slot, when every ADC latches its channel (at most adc_count
        entries, in channel order).
        """
        cfg = self.config
        self.now_ns += cfg.adc.t_sample_min_ns
        t = self.now_ns
        n = cfg.n_channels_per_adc
        mux = self._mux_pos
        for a in range(cfg.adc_count):
            ch = a * n + mux
            try:
                code = sampler(ch, t)
            except Exception as exc:
                raise FsmStepError(f"sampler failed for channel {ch}: {exc}") from exc
            self._acc[a] += code
        self._in_window += 1
        if self._in_window < cfg.k_window:
            return []
        latched = []
        for a in range(cfg.adc_count):
            ch = a * n + mux
            self._seq[ch] += 1
            avg = self._acc[a] // cfg.k_window
            self.bank.latch(ch, avg, t, self._seq[ch])
            latched.append(AveragedSample(ch, avg, t, self._seq[ch]))
            self._acc[a] = 0
        self._in_window = 0
        self._mux_pos = (mux + 1) % n
        return latched


def read_register(bank: RegisterBank, channel_id: int) -> RegisterValue:
    """Module-level convenience for RegisterBank.read."""
    return bank.read(channel_id)
