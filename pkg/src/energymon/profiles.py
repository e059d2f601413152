"""Synthetic per-rail workload profiles and the analytic energy oracle.

A profile is an ordered list of piecewise-constant phases, each holding
(current, voltage) per rail. With a repeat count the phase list cycles
that many times; afterwards (and for profiles without repeat, after the
single play) the final phase's values hold forever. The oracle
integrates i*v exactly over phase overlaps, so simulated measurements
can be judged against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Mapping

RailState = tuple[float, float]  # (i_amps, v_volts)


class ProfileError(ValueError):
    """Profile shape or parameter violates its invariants."""


@dataclass(frozen=True)
class Phase:
    duration_ns: int
    rails: Mapping[str, RailState]

    def __post_init__(self) -> None:
        if self.duration_ns <= 0:
            raise ProfileError(f"phase duration must be > 0, got {self.duration_ns}")
        for rail, (i_amps, v_volts) in self.rails.items():
            if i_amps < 0 or v_volts < 0:
                raise ProfileError(
                    f"rail {rail!r}: currents and voltages must be >= 0, "
                    f"got ({i_amps}, {v_volts})"
                )
        object.__setattr__(self, "rails", MappingProxyType(dict(self.rails)))


@dataclass(frozen=True)
class WorkloadProfile:
    phases: tuple[Phase, ...]
    repeat: int | None = None  # None: play once; k: play the list k times

    def __post_init__(self) -> None:
        if not self.phases:
            raise ProfileError("profile needs at least one phase")
        if self.repeat is not None and self.repeat < 1:
            raise ProfileError(f"repeat count must be >= 1, got {self.repeat}")

    @cached_property
    def cycle_ns(self) -> int:
        return sum(ph.duration_ns for ph in self.phases)

    @property
    def plays(self) -> int:
        return 1 if self.repeat is None else self.repeat

    def state_at(self, t_ns: int) -> Mapping[str, RailState]:
        """Per-rail (i, v) at virtual time t; holds the last phase past the end."""
        if t_ns < 0:
            raise ProfileError(f"t_ns must be >= 0, got {t_ns}")
        if t_ns >= self.cycle_ns * self.plays:
            return self.phases[-1].rails
        t = t_ns % self.cycle_ns
        for ph in self.phases:
            if t < ph.duration_ns:
                return ph.rails
            t -= ph.duration_ns
        return self.phases[-1].rails  # unreachable: t < cycle_ns

    def rail_state_at(self, rail: str, t_ns: int) -> RailState:
        return self.state_at(t_ns).get(rail, (0.0, 0.0))

    def _segment_at(self, rail: str, t_ns: int) -> tuple[float, float, int | None]:
        """(i, v, segment end in absolute ns) at t; end=None in the hold tail."""
        end_of_plays = self.cycle_ns * self.plays
        if t_ns >= end_of_plays:
            i_amps, v_volts = self.phases[-1].rails.get(rail, (0.0, 0.0))
            return i_amps, v_volts, None
        cycle_start = t_ns - t_ns % self.cycle_ns
        t = t_ns - cycle_start
        edge = 0
        for ph in self.phases:
            edge += ph.duration_ns
            if t < edge:
                i_amps, v_volts = ph.rails.get(rail, (0.0, 0.0))
                return i_amps, v_volts, cycle_start + edge
        raise AssertionError("unreachable")

    def analytic_energy(self, rail: str, t0_ns: int, t1_ns: int) -> float:
        """Exact integral of i*v over [t0, t1) in joules."""
        if not 0 <= t0_ns < t1_ns:
            raise ProfileError(f"need 0 <= t0 < t1, got [{t0_ns}, {t1_ns})")
        total = 0.0
        t = t0_ns
        while t < t1_ns:
            i_amps, v_volts, seg_end = self._segment_at(rail, t)
            upto = t1_ns if seg_end is None else min(seg_end, t1_ns)
            total += i_amps * v_volts * (upto - t) * 1e-9
            t = upto
        return total

    def rail_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for ph in self.phases:
            for rail in ph.rails:
                if rail not in names:
                    names.append(rail)
        return tuple(names)


def constant_profile(
    i_amps: float,
    v_volts: float,
    duration_ns: int,
    rails: tuple[str, ...] = ("vdd_core",),
) -> WorkloadProfile:
    """One phase holding (i, v) on every listed rail."""
    state = {rail: (i_amps, v_volts) for rail in rails}
    return WorkloadProfile(phases=(Phase(duration_ns, state),))


def step_profile(
    low_a: float,
    high_a: float,
    v_volts: float,
    period_ns: int,
    count: int,
    rails: tuple[str, ...] = ("vdd_core",),
) -> WorkloadProfile:
    """``count`` periods of low/high alternation; each level lasts period/2."""
    if count < 1:
        raise ProfileError(f"period count must be >= 1, got {count}")
    if period_ns < 2:
        raise ProfileError(f"period must be >= 2 ns, got {period_ns}")
    half = period_ns // 2
    phases: list[Phase] = []
    for _ in range(count):
        phases.append(Phase(half, {rail: (low_a, v_volts) for rail in rails}))
        phases.append(Phase(period_ns - half, {rail: (high_a, v_volts) for rail in rails}))
    return WorkloadProfile(phases=tuple(phases))


def ann_epoch_profile(
    v_volts: float = 0.85,
    load_a: float = 0.6,
    forward_a: float = 1.8,
    backward_a: float = 2.2,
    idle_a: float = 0.3,
    phase_ns: int = 5_000_000,
    epochs: int = 10,
    rails: tuple[str, ...] = ("vdd_core",),
) -> WorkloadProfile:
    """Repeating [load, forward-burst, backward-burst, idle] epoch template."""
    levels = (load_a, forward_a, backward_a, idle_a)
    phases = tuple(
        Phase(phase_ns, {rail: (level, v_volts) for rail in rails}) for level in levels
    )
    return WorkloadProfile(phases=phases, repeat=epochs)


def gen_profile(kind: str, **params: object) -> WorkloadProfile:
    """Factory dispatch used by the CLI: constant | step | ann_epoch."""
    factories = {
        "constant": constant_profile,
        "step": step_profile,
        "ann_epoch": ann_epoch_profile,
    }
    try:
        factory = factories[kind]
    except KeyError:
        raise ProfileError(
            f"unknown profile kind {kind!r} (expected one of {sorted(factories)})"
        ) from None
    return factory(**params)  # type: ignore[arg-type]
