"""Forward model of the measurement board.

Current rails use a high-side shunt whose differential voltage drop is
amplified by a signal-conditioning stage and digitized; voltage rails go
through a resistive divider straight into the ADC. Everything here is a
pure function over value types, so the model can be called from any
thread.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional


class ChannelKind(Enum):
    CURRENT = "current"
    VOLTAGE = "voltage"


class KindMismatchError(TypeError):
    """An operation was applied to a channel of the wrong kind."""


class ChannelConfigError(ValueError):
    """A channel, ADC, or board description violates its invariants."""


@dataclass(frozen=True)
class AdcSpec:
    """B-bit ADC spanning [0, vref_v] with a minimum per-conversion time."""

    bits: int = 12
    vref_v: float = 3.3
    t_sample_min_ns: int = 1000

    def __post_init__(self) -> None:
        if not 8 <= self.bits <= 16:
            raise ChannelConfigError(f"adc bits must be in [8, 16], got {self.bits}")
        if self.vref_v <= 0:
            raise ChannelConfigError(f"adc vref_v must be > 0, got {self.vref_v}")
        # >= 1 us per conversion keeps the modeled bandwidth below 1 MHz
        if self.t_sample_min_ns < 1000:
            raise ChannelConfigError(
                f"adc t_sample_min_ns must be >= 1000, got {self.t_sample_min_ns}"
            )

    @property
    def code_max(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class ChannelSpec:
    """One sensing line of the measurement board.

    ``r_shunt_ohm``, ``cond_gain`` and ``cond_offset_v`` describe the
    current-sense chain; ``divider_ratio`` the voltage-sense divider.
    ``nominal_voltage_v`` is the rail's design voltage, used downstream
    as a pairing fallback.
    """

    channel_id: int
    rail_name: str
    kind: ChannelKind
    r_shunt_ohm: float = 0.0
    cond_gain: float = 1.0
    cond_offset_v: float = 0.0
    divider_ratio: float = 1.0
    nominal_voltage_v: float = 0.0

    def __post_init__(self) -> None:
        if self.channel_id < 0:
            raise ChannelConfigError(f"channel_id must be >= 0, got {self.channel_id}")
        if not self.rail_name:
            raise ChannelConfigError("rail_name must be non-empty")
        if self.cond_gain <= 0:
            raise ChannelConfigError(
                f"channel {self.channel_id}: cond_gain must be > 0, got {self.cond_gain}"
            )
        if self.kind is ChannelKind.CURRENT and self.r_shunt_ohm <= 0:
            raise ChannelConfigError(
                f"channel {self.channel_id}: r_shunt_ohm must be > 0 on a current channel"
            )
        if self.kind is ChannelKind.VOLTAGE and not 0 < self.divider_ratio <= 1:
            raise ChannelConfigError(
                f"channel {self.channel_id}: divider_ratio must be in (0, 1], "
                f"got {self.divider_ratio}"
            )


@dataclass(frozen=True)
class RawSample:
    """ADC output for one conversion: code in [0, 2^B - 1] at virtual time t_ns."""

    channel_id: int
    code: int
    t_ns: int
    saturated: bool = False


class GaussianNoise:
    """Zero-mean additive perturbation of the pre-quantization voltage.

    Off by default everywhere; always constructed with an explicit seed
    so noisy runs stay reproducible.
    """

    def __init__(self, sigma_v: float, seed: int | str) -> None:
        if sigma_v < 0:
            raise ChannelConfigError(f"noise sigma_v must be >= 0, got {sigma_v}")
        self.sigma_v = sigma_v
        self._rng = random.Random(seed)

    def perturb(self, v: float) -> float:
        return v + self._rng.gauss(0.0, self.sigma_v)


def differential_voltage(i_amps: float, spec: ChannelSpec) -> float:
    """Voltage drop across the shunt for a given rail current (Ohm's law)."""
    if spec.kind is not ChannelKind.CURRENT:
        raise KindMismatchError(
            f"channel {spec.channel_id} ({spec.rail_name}) is not a current channel"
        )
    if i_amps < 0:
        raise ValueError(f"rail current must be >= 0, got {i_amps}")
    return i_amps * spec.r_shunt_ohm


def condition(v_diff: float, spec: ChannelSpec, adc: AdcSpec) -> float:
    """Amplify and offset the shunt voltage, saturating at the amplifier rails."""
    v = v_diff * spec.cond_gain + spec.cond_offset_v
    return min(max(v, 0.0), adc.vref_v)


def quantize(v: float, adc: AdcSpec) -> int:
    """Floor-quantize a voltage in [0, vref] to an ADC code (mid-rise, clamped)."""
    if v < 0:
        raise ValueError(f"quantizer input must be >= 0, got {v}")
    return min(math.floor(v / adc.vref_v * (1 << adc.bits)), adc.code_max)


def sample_channel(
    true_state: tuple[float, float],
    spec: ChannelSpec,
    adc: AdcSpec,
    t_ns: int,
    noise: Optional[GaussianNoise] = None,
) -> RawSample:
    """Digitize one instant of a rail's (current, voltage) state.

    Current channels run shunt -> conditioner -> quantizer; voltage
    channels run divider -> clamp -> quantizer. Saturation (either rail
    of the conditioner, or a divider output beyond vref) is flagged on
    the sample, not raised.
    """
    i_amps, v_rail = true_state
    if spec.kind is ChannelKind.CURRENT:
        v_ideal = differential_voltage(i_amps, spec) * spec.cond_gain + spec.cond_offset_v
    else:
        v_ideal = v_rail * spec.divider_ratio
    v = min(max(v_ideal, 0.0), adc.vref_v)
    saturated = v != v_ideal
    if noise is not None:
        v = min(max(noise.perturb(v), 0.0), adc.vref_v)
    return RawSample(spec.channel_id, quantize(v, adc), t_ns, saturated)


class Board:
    """A set of uniquely-indexed sensing channels sharing one ADC spec."""

    def __init__(self, channels: Iterable[ChannelSpec], adc: AdcSpec | None = None) -> None:
        self.adc = adc if adc is not None else AdcSpec()
        self.channels: dict[int, ChannelSpec] = {}
        seen_rails: set[tuple[str, ChannelKind]] = set()
        for ch in channels:
            if ch.channel_id in self.channels:
                raise ChannelConfigError(f"duplicate channel_id {ch.channel_id}")
            key = (ch.rail_name, ch.kind)
            if key in seen_rails:
                raise ChannelConfigError(
                    f"duplicate {ch.kind.value} channel for rail {ch.rail_name!r}"
                )
            seen_rails.add(key)
            self.channels[ch.channel_id] = ch

    def spec(self, channel_id: int) -> ChannelSpec:
        try:
            return self.channels[channel_id]
        except KeyError:
            raise ChannelConfigError(f"unknown channel_id {channel_id}") from None

    def sample(
        self,
        channel_id: int,
        true_state: tuple[float, float],
        t_ns: int,
        noise: Optional[GaussianNoise] = None,
    ) -> RawSample:
        return sample_channel(true_state, self.spec(channel_id), self.adc, t_ns, noise)

    def __len__(self) -> int:
        return len(self.channels)
