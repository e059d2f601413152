"""Config file formats: board, cluster, and profile descriptions.

All three are line-oriented ``key = value`` files with ``[section]``
headers (the crossbar config has its own format, see the crossbar
module). Paths inside a cluster file are resolved relative to the file
itself. Durations accept an ``ns|us|ms|s`` suffix; a bare integer is
nanoseconds.
"""

from __future__ import annotations

import configparser
import os
import re
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .avgfsm import FsmConfig
from .crossbar import CrossbarConfigError, parse_crossbar_config
from .profiles import Phase, WorkloadProfile
from .sensing import AdcSpec, ChannelConfigError, ChannelKind, ChannelSpec
from .simulation import NodeConfig


class ConfigFileError(ValueError):
    """A config file is missing, malformed, or violates its schema."""


_DURATION_RE = re.compile(r"^([0-9]+(?:\.[0-9]+)?)(ns|us|ms|s)?$")
_DURATION_SCALE = {"ns": 1, "us": 10**3, "ms": 10**6, "s": 10**9}


def parse_duration_ns(text: str) -> int:
    """'128us' -> 128000; a bare integer is already nanoseconds."""
    m = _DURATION_RE.match(text.strip())
    if m is None:
        raise ConfigFileError(f"bad duration {text!r} (expected e.g. 1500, 10us, 20ms, 1s)")
    value, unit = m.groups()
    if unit is None and "." in value:
        raise ConfigFileError(f"bare duration {text!r} must be an integer nanosecond count")
    try:
        ns = Decimal(value) * _DURATION_SCALE[unit or "ns"]
    except InvalidOperation as exc:
        raise ConfigFileError(f"bad duration {text!r}") from exc
    if ns != ns.to_integral_value():
        raise ConfigFileError(f"duration {text!r} is not a whole number of nanoseconds")
    return int(ns)


def _read_ini(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # rail names are case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigFileError(f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
    return parser


class _Section:
    """One config section with schema-checked typed access."""

    def __init__(self, path: Path, name: str, items: dict[str, str]) -> None:
        self.path = path
        self.name = name
        self.items = items
        self.used: set[str] = set()

    def fail(self, message: str) -> ConfigFileError:
        return ConfigFileError(f"{self.path} [{self.name}]: {message}")

    def get(self, key: str, default: str | None = None, required: bool = False) -> str | None:
        self.used.add(key)
        if key in self.items:
            return self.items[key]
        if required:
            raise self.fail(f"missing required key {key!r}")
        return default

    def get_float(self, key: str, default: float | None = None, required: bool = False) -> float | None:
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise self.fail(f"{key} must be a number, got {raw!r}") from None

    def get_int(self, key: str, default: int | None = None, required: bool = False) -> int | None:
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise self.fail(f"{key} must be an integer, got {raw!r}") from None

    def get_duration(self, key: str, default: int | None = None, required: bool = False) -> int | None:
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return parse_duration_ns(raw)
        except ConfigFileError as exc:
            raise self.fail(f"{key}: {exc}") from None

    def check_no_extras(self, prefixes: tuple[str, ...] = ()) -> None:
        extras = [
            k for k in self.items
            if k not in self.used and not any(k.startswith(p) for p in prefixes)
        ]
        if extras:
            raise self.fail(f"unknown keys: {', '.join(sorted(extras))}")


def _sections(parser: configparser.ConfigParser, path: Path, prefix: str) -> list[tuple[str, _Section]]:
    out = []
    for name in parser.sections():
        if name.startswith(prefix + "."):
            ident = name[len(prefix) + 1 :]
            out.append((ident, _Section(path, name, dict(parser[name]))))
    return out


_KINDS = {"current": ChannelKind.CURRENT, "voltage": ChannelKind.VOLTAGE}


def load_board_channels(path: str | os.PathLike[str]) -> list[ChannelSpec]:
    """Parse a board description: one [channel.<id>] section per sensing line."""
    path = Path(path)
    parser = _read_ini(path)
    channels: list[ChannelSpec] = []
    sections = _sections(parser, path, "channel")
    if not sections:
        raise ConfigFileError(f"{path}: no [channel.<id>] sections")
    for ident, sec in sections:
        try:
            channel_id = int(ident)
        except ValueError:
            raise sec.fail(f"channel id {ident!r} must be an integer") from None
        kind_raw = sec.get("kind", required=True)
        if kind_raw not in _KINDS:
            raise sec.fail(f"kind must be 'current' or 'voltage', got {kind_raw!r}")
        kind = _KINDS[kind_raw]
        rail = sec.get("rail", required=True)
        try:
            spec = ChannelSpec(
                channel_id=channel_id,
                rail_name=rail,
                kind=kind,
                r_shunt_ohm=sec.get_float("r_shunt_ohm", 0.0),
                cond_gain=sec.get_float("cond_gain", 1.0),
                cond_offset_v=sec.get_float("cond_offset_v", 0.0),
                divider_ratio=sec.get_float("divider_ratio", 1.0),
                nominal_voltage_v=sec.get_float("nominal_voltage_v", 0.0),
            )
        except ChannelConfigError as exc:
            raise sec.fail(str(exc)) from None
        sec.check_no_extras()
        channels.append(spec)
    channels.sort(key=lambda c: c.channel_id)
    return channels


def write_board_channels(channels: list[ChannelSpec], path: str | os.PathLike[str]) -> None:
    lines = []
    for spec in sorted(channels, key=lambda c: c.channel_id):
        lines.append(f"[channel.{spec.channel_id}]")
        lines.append(f"kind = {spec.kind.value}")
        lines.append(f"rail = {spec.rail_name}")
        if spec.kind is ChannelKind.CURRENT:
            lines.append(f"r_shunt_ohm = {spec.r_shunt_ohm!r}")
            lines.append(f"cond_gain = {spec.cond_gain!r}")
            lines.append(f"cond_offset_v = {spec.cond_offset_v!r}")
        else:
            lines.append(f"divider_ratio = {spec.divider_ratio!r}")
        lines.append(f"nominal_voltage_v = {spec.nominal_voltage_v!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_profile(path: str | os.PathLike[str]) -> WorkloadProfile:
    """Parse a workload profile: [phase.<k>] sections plus optional [profile]."""
    path = Path(path)
    parser = _read_ini(path)
    repeat: int | None = None
    if parser.has_section("profile"):
        sec = _Section(path, "profile", dict(parser["profile"]))
        repeat = sec.get_int("repeat")
        sec.check_no_extras()
    indexed: list[tuple[int, _Section]] = []
    for ident, sec in _sections(parser, path, "phase"):
        try:
            indexed.append((int(ident), sec))
        except ValueError:
            raise sec.fail(f"phase id {ident!r} must be an integer") from None
    if not indexed:
        raise ConfigFileError(f"{path}: no [phase.<k>] sections")
    indexed.sort(key=lambda pair: pair[0])
    phases: list[Phase] = []
    for _, sec in indexed:
        duration = sec.get_duration("duration", required=True)
        rails: dict[str, tuple[float, float]] = {}
        for key, raw in sec.items.items():
            if not key.startswith("rail."):
                continue
            sec.used.add(key)
            rail = key[len("rail.") :]
            parts = raw.split()
            if len(parts) != 2:
                raise sec.fail(f"{key} must be '<i_amps> <v_volts>', got {raw!r}")
            try:
                rails[rail] = (float(parts[0]), float(parts[1]))
            except ValueError:
                raise sec.fail(f"{key}: values must be numbers, got {raw!r}") from None
        if not rails:
            raise sec.fail("phase drives no rails (need at least one rail.<name> key)")
        sec.check_no_extras()
        phases.append(Phase(duration, rails))
    return WorkloadProfile(phases=tuple(phases), repeat=repeat)


def write_profile(profile: WorkloadProfile, path: str | os.PathLike[str]) -> None:
    lines = []
    if profile.repeat is not None:
        lines += ["[profile]", f"repeat = {profile.repeat}", ""]
    for i, phase in enumerate(profile.phases):
        lines.append(f"[phase.{i}]")
        lines.append(f"duration = {phase.duration_ns}")
        for rail, (i_amps, v_volts) in phase.rails.items():
            lines.append(f"rail.{rail} = {i_amps!r} {v_volts!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_cluster(path: str | os.PathLike[str]) -> list[NodeConfig]:
    """Parse a cluster description: one [node.<id>] section per node.

    board / crossbar / profile keys are paths resolved relative to the
    cluster file.
    """
    path = Path(path)
    base = path.parent
    parser = _read_ini(path)
    sections = _sections(parser, path, "node")
    if not sections:
        raise ConfigFileError(f"{path}: no [node.<id>] sections")
    nodes: list[NodeConfig] = []
    for node_id, sec in sections:
        board_path = base / sec.get("board", required=True)
        crossbar_path = base / sec.get("crossbar", required=True)
        profile_path = base / sec.get("profile", required=True)
        try:
            adc = AdcSpec(
                bits=sec.get_int("adc_bits", 12),
                vref_v=sec.get_float("adc_vref_v", 3.3),
                t_sample_min_ns=sec.get_duration("adc_t_sample_min_ns", 1000),
            )
            fsm = FsmConfig(
                k_window=sec.get_int("k_window", 16),
                n_channels_per_adc=sec.get_int("n_channels_per_adc", 8),
                adc_count=sec.get_int("adc_count", 2),
                adc=adc,
            )
        except ChannelConfigError as exc:
            raise sec.fail(str(exc)) from None
        channels = load_board_channels(board_path)
        try:
            crossbar_text = Path(crossbar_path).read_text()
        except OSError as exc:
            raise sec.fail(f"cannot read crossbar file: {exc}") from None
        try:
            crossbar = parse_crossbar_config(
                crossbar_text, channel_count=fsm.total_channels
            )
        except CrossbarConfigError as exc:
            raise sec.fail(f"crossbar {crossbar_path}: {exc}") from None
        profile = load_profile(profile_path)
        config = NodeConfig(
            node_id=node_id,
            channels=channels,
            crossbar=crossbar,
            fsm=fsm,
            profile=profile,
            mailbox_capacity=sec.get_int("mailbox_capacity", 1024),
            poll_period_ns=sec.get_duration("poll_period_ns"),
            noise_sigma_v=sec.get_float("noise_sigma_v", 0.0),
        )
        sec.check_no_extras()
        nodes.append(config)
    return nodes
