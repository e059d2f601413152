"""Discrete-event harness wiring the full per-node pipeline.

Each node runs sensing -> averaging FSM -> monitor firmware -> energy
collector under one shared virtual clock (integer nanoseconds, no
wall-clock dependence anywhere). Event granularity is a single ADC
conversion; monitor polls and collector ticks fire every half averaging
period. Telemetry flows through an in-process broker to the hub, and
the report compares measured energy against the analytic profile
oracle.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable

from .avgfsm import AvgSampleFsm, FsmConfig, t_avg
from .collector import EnergyCollector, Publisher, valid_topic_segment
from .crossbar import CrossbarMap, RoutingError
from .firmware import Mailbox, RuntimeMonitor
from .hub import SeriesKey, TelemetryHub, TimeSeriesStore
from .mqtt.broker import BrokerCore, LocalClient
from .profiles import WorkloadProfile
from .sensing import Board, ChannelConfigError, ChannelKind, ChannelSpec, GaussianNoise


class ConfigValidationError(ValueError):
    """One or more node configurations are invalid; message lists all findings."""


class VirtualClock:
    """Shared integer-nanosecond simulation clock."""

    def __init__(self, start_ns: int = 0) -> None:
        self.now_ns = start_ns

    def now(self) -> int:
        return self.now_ns


@dataclass
class NodeConfig:
    node_id: str
    channels: list[ChannelSpec]
    crossbar: CrossbarMap
    fsm: FsmConfig
    profile: WorkloadProfile
    mailbox_capacity: int = 1024
    poll_period_ns: int | None = None  # default: t_avg // 2
    noise_sigma_v: float = 0.0

    def effective_poll_period_ns(self) -> int:
        if self.poll_period_ns is not None:
            return self.poll_period_ns
        return max(self.fsm.adc.t_sample_min_ns, t_avg(self.fsm) // 2)

    def validate(self) -> list[str]:
        """All invariant violations, prefixed with the node id."""
        problems: list[str] = []
        tag = f"node {self.node_id!r}"
        if not valid_topic_segment(self.node_id):
            problems.append(f"{tag}: node_id is not a valid topic segment")
        try:
            Board(self.channels, self.fsm.adc)
        except ChannelConfigError as exc:
            problems.append(f"{tag}: {exc}")
        for spec in self.channels:
            try:
                target = self.crossbar.route(spec.channel_id)
            except RoutingError:
                problems.append(
                    f"{tag}: channel {spec.channel_id} ({spec.rail_name}) "
                    f"is not routed by the crossbar"
                )
                continue
            if target >= self.fsm.total_channels:
                problems.append(
                    f"{tag}: channel {spec.channel_id} routed to ADC channel "
                    f"{target}, beyond the {self.fsm.total_channels} available"
                )
        if self.mailbox_capacity < 1:
            problems.append(f"{tag}: mailbox_capacity must be >= 1")
        if self.poll_period_ns is not None and self.poll_period_ns < 1:
            problems.append(f"{tag}: poll_period_ns must be >= 1")
        if self.noise_sigma_v < 0:
            problems.append(f"{tag}: noise_sigma_v must be >= 0")
        return problems

    def current_rails(self) -> list[str]:
        return [c.rail_name for c in self.channels if c.kind is ChannelKind.CURRENT]


def default_board_channels(
    rail_names: tuple[str, ...],
    nominal_v: float = 0.85,
    r_shunt_ohm: float = 0.01,
    cond_gain: float = 100.0,
) -> list[ChannelSpec]:
    """Default measurement-board layout: current lines first, voltage lines after.

    With the identity crossbar and the default FsmConfig (2 ADCs x 8
    channels) the first ADC scans all current lines and the second all
    voltage lines, so each rail's current and voltage latch together.
    """
    channels = [
        ChannelSpec(
            channel_id=i,
            rail_name=rail,
            kind=ChannelKind.CURRENT,
            r_shunt_ohm=r_shunt_ohm,
            cond_gain=cond_gain,
            nominal_voltage_v=nominal_v,
        )
        for i, rail in enumerate(rail_names)
    ]
    channels += [
        ChannelSpec(
            channel_id=len(rail_names) + i,
            rail_name=rail,
            kind=ChannelKind.VOLTAGE,
            divider_ratio=1.0,
            nominal_voltage_v=nominal_v,
        )
        for i, rail in enumerate(rail_names)
    ]
    return channels


class SimulatedNode:
    """One node's pipeline plus its event schedule state."""

    def __init__(self, config: NodeConfig, publisher: Publisher, seed: int = 0) -> None:
        self.config = config
        self.board = Board(config.channels, config.fsm.adc)
        self.fsm = AvgSampleFsm(config.fsm)
        window_ns = t_avg(config.fsm)
        channel_table = {
            config.crossbar.route(spec.channel_id): spec for spec in config.channels
        }
        self.mailbox = Mailbox(config.mailbox_capacity)
        self.monitor = RuntimeMonitor(
            self.fsm.bank, channel_table, config.fsm.adc, window_ns, self.mailbox
        )
        rail_specs = {
            spec.rail_name: spec
            for spec in config.channels
            if spec.kind is ChannelKind.CURRENT
        }
        self.collector = EnergyCollector(config.node_id, self.mailbox, publisher, rail_specs)
        self.poll_period_ns = config.effective_poll_period_ns()
        self.sampler = self._build_sampler(channel_table, seed)

    def _build_sampler(
        self, channel_table: dict[int, ChannelSpec], seed: int
    ) -> Callable[[int, int], int]:
        adc = self.config.fsm.adc
        vref = adc.vref_v
        scale = 1 << adc.bits
        code_max = adc.code_max
        profile = self.config.profile
        current = ChannelKind.CURRENT
        entries: dict[int, tuple[ChannelSpec, GaussianNoise | None]] = {}
        for adc_ch, spec in channel_table.items():
            noise = None
            if self.config.noise_sigma_v > 0:
                noise = GaussianNoise(
                    self.config.noise_sigma_v,
                    f"{seed}/{self.config.node_id}/{spec.channel_id}",
                )
            entries[adc_ch] = (spec, noise)

        def sampler(adc_ch: int, t_ns: int) -> int:
            entry = entries.get(adc_ch)
            if entry is None:
                return 0  # unrouted ADC input floats at ground
            spec, noise = entry
            i_amps, v_rail = profile.rail_state_at(spec.rail_name, t_ns)
            if spec.kind is current:
                v = i_amps * spec.r_shunt_ohm * spec.cond_gain + spec.cond_offset_v
            else:
                v = v_rail * spec.divider_ratio
            if v < 0.0:
                v = 0.0
            elif v > vref:
                v = vref
            if noise is not None:
                v = noise.perturb(v)
                if v < 0.0:
                    v = 0.0
                elif v > vref:
                    v = vref
            code = int(v / vref * scale)
            return code if code <= code_max else code_max

        return sampler

    def poll(self, now_ns: int) -> None:
        self.monitor.poll_once()
        self.collector.tick(now_ns)


@dataclass(frozen=True)
class ReportRow:
    node_id: str
    rail_name: str
    records: int
    measured_j: float
    oracle_j: float
    rel_err: float | None  # None when the oracle is zero but energy was measured
    seq_losses: int


@dataclass
class SimulationReport:
    t_end_ns: int
    seed: int
    rows: list[ReportRow]
    node_measured_j: dict[str, float]
    node_oracle_j: dict[str, float]
    total_measured_j: float
    total_oracle_j: float
    mailbox_dropped: int
    forwarded: int
    published: int
    publish_failures: int
    retry_dropped: int
    seq_losses: int
    hub: TelemetryHub = field(repr=False, compare=False, default=None)  # type: ignore[assignment]
    store: TimeSeriesStore = field(repr=False, compare=False, default=None)  # type: ignore[assignment]

    def to_jsonl(self) -> str:
        """One summary object per (node, rail), newline-terminated."""
        lines = []
        for row in self.rows:
            lines.append(
                json.dumps(
                    {
                        "node": row.node_id,
                        "rail": row.rail_name,
                        "records": row.records,
                        "measured_j": row.measured_j,
                        "oracle_j": row.oracle_j,
                        "rel_err": row.rel_err,
                        "seq_losses": row.seq_losses,
                    },
                    separators=(",", ":"),
                )
            )
        return "".join(line + "\n" for line in lines)


def validate_cluster(cluster: list[NodeConfig]) -> None:
    """Raise ConfigValidationError listing every problem across the cluster."""
    problems: list[str] = []
    seen: set[str] = set()
    for config in cluster:
        if config.node_id in seen:
            problems.append(f"duplicate node_id {config.node_id!r}")
        seen.add(config.node_id)
        problems.extend(config.validate())
    if problems:
        raise ConfigValidationError("\n".join(problems))


def drive_nodes(nodes: list[SimulatedNode], t_end_ns: int, clock: VirtualClock) -> None:
    """Advance all node pipelines event-by-event until t_end_ns.

    Heap order (time, kind, node index) with conversions before polls
    makes the interleaving fully deterministic. A final poll at t_end
    drains anything latched on the last conversion.
    """
    heap: list[tuple[int, int, int]] = []
    for idx, node in enumerate(nodes):
        heapq.heappush(heap, (node.fsm.config.adc.t_sample_min_ns, 0, idx))
        heapq.heappush(heap, (node.poll_period_ns, 1, idx))
    while heap and heap[0][0] <= t_end_ns:
        t, kind, idx = heapq.heappop(heap)
        clock.now_ns = t
        node = nodes[idx]
        if kind == 0:
            node.fsm.step(node.sampler)
            heapq.heappush(heap, (t + node.fsm.config.adc.t_sample_min_ns, 0, idx))
        else:
            node.poll(t)
            heapq.heappush(heap, (t + node.poll_period_ns, 1, idx))
    clock.now_ns = t_end_ns
    for node in nodes:
        node.poll(t_end_ns)


def summarize(
    cluster: list[NodeConfig],
    nodes: list[SimulatedNode],
    hub: TelemetryHub,
    store: TimeSeriesStore,
    t_end_ns: int,
    seed: int,
) -> SimulationReport:
    rows: list[ReportRow] = []
    node_measured: dict[str, float] = {}
    node_oracle: dict[str, float] = {}
    for config in cluster if t_end_ns > 0 else []:
        measured_total = 0.0
        oracle_total = 0.0
        for rail in config.current_rails():
            key = SeriesKey(config.node_id, rail)
            points = store.points(key, 0, t_end_ns)
            measured = math.fsum(p.e_joules for p in points)
            oracle = config.profile.analytic_energy(rail, 0, t_end_ns)
            records = len(points)
            if oracle != 0.0:
                rel_err: float | None = (measured - oracle) / oracle
            else:
                rel_err = None if measured != 0.0 else 0.0
            rows.append(
                ReportRow(
                    node_id=config.node_id,
                    rail_name=rail,
                    records=records,
                    measured_j=measured,
                    oracle_j=oracle,
                    rel_err=rel_err,
                    seq_losses=hub.loss_count(key),
                )
            )
            measured_total += measured
            oracle_total += oracle
        node_measured[config.node_id] = measured_total
        node_oracle[config.node_id] = oracle_total
    return SimulationReport(
        t_end_ns=t_end_ns,
        seed=seed,
        rows=rows,
        node_measured_j=node_measured,
        node_oracle_j=node_oracle,
        total_measured_j=sum(node_measured.values()),
        total_oracle_j=sum(node_oracle.values()),
        mailbox_dropped=sum(n.mailbox.dropped() for n in nodes),
        forwarded=sum(n.monitor.forwarded_count for n in nodes),
        published=sum(n.collector.published_count for n in nodes),
        publish_failures=sum(n.collector.publish_failure_count for n in nodes),
        retry_dropped=sum(n.collector.retry_dropped_count for n in nodes),
        seq_losses=hub.loss_count(),
        hub=hub,
        store=store,
    )


def run_simulation(
    cluster: list[NodeConfig],
    broker: BrokerCore | None = None,
    hub: TelemetryHub | None = None,
    *,
    t_end_ns: int,
    seed: int = 0,
    store: TimeSeriesStore | None = None,
    clock: VirtualClock | None = None,
) -> SimulationReport:
    """Run the whole cluster against the in-process broker and summarize.

    Identical (cluster, seed) inputs produce byte-identical reports and
    store files. Config validation failures are all raised before any
    stepping; t_end_ns == 0 yields an empty report with no messages.
    """
    if t_end_ns < 0:
        raise ValueError(f"t_end_ns must be >= 0, got {t_end_ns}")
    validate_cluster(cluster)
    if clock is None:
        clock = VirtualClock()
    if broker is None:
        broker = BrokerCore()
    if hub is None:
        if store is None:
            store = TimeSeriesStore()
        hub = TelemetryHub(store, clock=clock.now)
    else:
        store = hub.store
    hub_client = LocalClient(
        broker, "hub", on_message=lambda topic, payload: hub.ingest(payload, topic)
    )
    hub_client.subscribe("energymon/#")
    nodes = [
        SimulatedNode(config, LocalClient(broker, config.node_id), seed)
        for config in cluster
    ]
    if t_end_ns > 0:
        drive_nodes(nodes, t_end_ns, clock)
    return summarize(cluster, nodes, hub, store, t_end_ns, seed)
