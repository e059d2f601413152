"""Command-line entry point.

Verbs: broker, hub, node, simulate, gen-profile, query, export.
Machine-readable output goes to stdout, diagnostics to stderr. Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import (
    ConfigFileError,
    load_cluster,
    parse_duration_ns,
    write_profile,
)
from .crossbar import CrossbarConfigError
from .hub import SeriesKey, StoreCorruptError, TelemetryHub, TimeSeriesStore, export_csv
from .mqtt.broker import MqttBroker
from .mqtt.client import MqttClient, MqttClientError
from .profiles import ProfileError, ann_epoch_profile, constant_profile, step_profile
from .sensing import ChannelConfigError
from .simulation import (
    ConfigValidationError,
    SimulatedNode,
    VirtualClock,
    drive_nodes,
    run_simulation,
    summarize,
    validate_cluster,
)

_RUNTIME_ERRORS = (
    ConfigFileError,
    ConfigValidationError,
    ChannelConfigError,
    CrossbarConfigError,
    ProfileError,
    StoreCorruptError,
    MqttClientError,
    OSError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _duration(text: str) -> int:
    return parse_duration_ns(text)  # ValueError subclass -> argparse usage error


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def build_parser() -> _Parser:
    parser = _Parser(prog="energymon", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB",
                                parser_class=_Parser)

    p = sub.add_parser("broker", help="run a standalone MQTT broker")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=1883)
    p.add_argument("--run-for", type=float, default=None, metavar="SECONDS",
                   help="exit after this many seconds (default: run until interrupted)")
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("hub",
                       help="subscribe to telemetry and ingest it into a store file")
    p.add_argument("--store", required=True, help="append-only store file path")
    p.add_argument("--broker", type=_address, default=("127.0.0.1", 1883),
                   metavar="HOST:PORT")
    p.add_argument("--topic", default="energymon/#")
    p.add_argument("--run-for", type=float, default=None, metavar="SECONDS")
    p.set_defaults(func=cmd_hub)

    p = sub.add_parser("node",
                       help="run one simulated node against an external broker")
    p.add_argument("--config", required=True, help="cluster config file")
    p.add_argument("--node-id", default=None,
                   help="which node to run (optional when the config has exactly one)")
    p.add_argument("--broker", type=_address, default=("127.0.0.1", 1883),
                   metavar="HOST:PORT")
    p.add_argument("--t-end", type=_duration, required=True, metavar="DURATION")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("simulate",
                       help="run a whole cluster and print the report")
    p.add_argument("--config", required=True, help="cluster config file")
    p.add_argument("--t-end", type=_duration, required=True, metavar="DURATION")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--store", default=None, help="persist ingested records to this file")
    p.add_argument("--broker", type=_address, default=None, metavar="HOST:PORT",
                   help="use an external TCP broker instead of the in-process one")
    p.add_argument("--plot-dir", default=None, metavar="DIR",
                   help="render report figures (PNG) into this directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-profile",
                       help="generate a workload profile file")
    p.add_argument("--kind", required=True, choices=["constant", "step", "ann-epoch"])
    p.add_argument("-o", "--output", required=True, metavar="PATH")
    p.add_argument("--rails", default="vdd_core",
                   help="comma-separated rail names (default vdd_core)")
    p.add_argument("--voltage", type=float, default=0.85, metavar="VOLTS")
    p.add_argument("--current", type=float, default=None, metavar="AMPS",
                   help="constant: load current")
    p.add_argument("--duration", type=_duration, default=None, metavar="DURATION",
                   help="constant: phase duration")
    p.add_argument("--low", type=float, default=None, metavar="AMPS", help="step: low current")
    p.add_argument("--high", type=float, default=None, metavar="AMPS", help="step: high current")
    p.add_argument("--period", type=_duration, default=None, metavar="DURATION",
                   help="step: full low+high period")
    p.add_argument("--count", type=int, default=None, help="step: number of periods")
    p.add_argument("--load-a", type=float, default=0.6, help="ann-epoch: load phase current")
    p.add_argument("--forward-a", type=float, default=1.8, help="ann-epoch: forward-burst current")
    p.add_argument("--backward-a", type=float, default=2.2, help="ann-epoch: backward-burst current")
    p.add_argument("--idle-a", type=float, default=0.3, help="ann-epoch: idle current")
    p.add_argument("--phase", type=_duration, default=5_000_000, metavar="DURATION",
                   help="ann-epoch: duration of each of the 4 phases")
    p.add_argument("--epochs", type=int, default=10, help="ann-epoch: repeat count")
    p.set_defaults(func=cmd_gen_profile)

    p = sub.add_parser("query",
                       help="energy and average power of one series over a window")
    p.add_argument("--store", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--rail", required=True)
    p.add_argument("--from", dest="t0", type=_duration, required=True, metavar="DURATION")
    p.add_argument("--to", dest="t1", type=_duration, required=True, metavar="DURATION")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export",
                       help="export stored series to CSV (optionally with figures)")
    p.add_argument("--store", required=True)
    p.add_argument("-o", "--output", required=True, metavar="CSV_PATH")
    p.add_argument("--node", action="append", default=None,
                   help="restrict to this node (repeatable)")
    p.add_argument("--rail", action="append", default=None,
                   help="restrict to this rail (repeatable)")
    p.add_argument("--from", dest="t0", type=_duration, default=0, metavar="DURATION")
    p.add_argument("--to", dest="t1", type=_duration, default=None, metavar="DURATION")
    p.add_argument("--plot", action="store_true",
                   help="render figures next to the CSV file")
    p.set_defaults(func=cmd_export)

    return parser


def cmd_broker(args: argparse.Namespace) -> int:
    broker = MqttBroker(args.host, args.port)
    broker.start()
    print(f"broker listening on {broker.host}:{broker.port}", file=sys.stderr)
    try:
        if args.run_for is not None:
            time.sleep(args.run_for)
        else:
            while True:
                time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        broker.stop()
    return 0


def cmd_hub(args: argparse.Namespace) -> int:
    path = Path(args.store)
    store = TimeSeriesStore.reopen(path) if path.exists() else TimeSeriesStore(path)
    hub = TelemetryHub(store)
    host, port = args.broker
    client = MqttClient("energymon-hub", host, port,
                        on_message=lambda topic, payload: hub.ingest(payload, topic))
    client.connect()
    client.subscribe(args.topic)
    print(f"hub subscribed to {args.topic} on {host}:{port}", file=sys.stderr)
    try:
        if args.run_for is not None:
            time.sleep(args.run_for)
        else:
            while True:
                time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        client.disconnect()
        store.close()
        print(
            f"ingested {hub.accepted_count} records "
            f"({hub.parse_error_count} parse errors, {hub.mismatch_count} mismatches, "
            f"{hub.loss_count()} lost)",
            file=sys.stderr,
        )
    return 0


def _pick_node(cluster, node_id):
    if node_id is None:
        if len(cluster) != 1:
            raise _UsageError(
                "error: --node-id is required when the config defines several nodes "
                f"({', '.join(c.node_id for c in cluster)})"
            )
        return cluster[0]
    for config in cluster:
        if config.node_id == node_id:
            return config
    raise ConfigFileError(f"no [node.{node_id}] section in {len(cluster)}-node config")


def cmd_node(args: argparse.Namespace) -> int:
    cluster = load_cluster(args.config)
    config = _pick_node(cluster, args.node_id)
    validate_cluster([config])
    host, port = args.broker
    client = MqttClient(config.node_id, host, port)
    client.connect()
    try:
        node = SimulatedNode(config, client, args.seed)
        drive_nodes([node], args.t_end, VirtualClock())
    finally:
        client.disconnect()
    print(json.dumps({
        "node": config.node_id,
        "t_end_ns": args.t_end,
        "forwarded": node.monitor.forwarded_count,
        "published": node.collector.published_count,
        "dropped": node.mailbox.dropped(),
        "publish_failures": node.collector.publish_failure_count,
    }, separators=(",", ":")))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cluster = load_cluster(args.config)
    if args.broker is None:
        clock = VirtualClock()
        store = TimeSeriesStore(args.store) if args.store else TimeSeriesStore()
        hub = TelemetryHub(store, clock=clock.now)
        try:
            report = run_simulation(
                cluster, hub=hub, t_end_ns=args.t_end, seed=args.seed, clock=clock
            )
        finally:
            store.close()  # interrupt still flushes whatever was ingested
    else:
        report = _simulate_external(args, cluster)
    sys.stdout.write(report.to_jsonl())
    print(
        f"measured {report.total_measured_j:.6g} J vs oracle {report.total_oracle_j:.6g} J; "
        f"{report.published} records published, {report.mailbox_dropped} dropped, "
        f"{report.seq_losses} lost",
        file=sys.stderr,
    )
    if args.plot_dir:
        from .figures import render_report_figures

        for path in render_report_figures(report, args.plot_dir):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def _simulate_external(args: argparse.Namespace, cluster) -> "object":
    validate_cluster(cluster)
    host, port = args.broker
    clock = VirtualClock()
    store = TimeSeriesStore(args.store) if args.store else TimeSeriesStore()
    hub = TelemetryHub(store, clock=clock.now)
    subscriber = MqttClient("energymon-hub", host, port,
                            on_message=lambda topic, payload: hub.ingest(payload, topic))
    subscriber.connect()
    subscriber.subscribe("energymon/#")
    publishers = []
    try:
        nodes = []
        for config in cluster:
            client = MqttClient(config.node_id, host, port)
            client.connect()
            publishers.append(client)
            nodes.append(SimulatedNode(config, client, args.seed))
        drive_nodes(nodes, args.t_end, clock)
        expected = sum(n.collector.published_count for n in nodes)
        deadline = time.monotonic() + 10.0
        while hub.accepted_count < expected and time.monotonic() < deadline:
            time.sleep(0.02)
        return summarize(cluster, nodes, hub, store, args.t_end, args.seed)
    finally:
        for client in publishers:
            client.disconnect()
        subscriber.disconnect()
        store.close()


def cmd_gen_profile(args: argparse.Namespace) -> int:
    rails = tuple(r.strip() for r in args.rails.split(",") if r.strip())
    if not rails:
        raise _UsageError("error: --rails must name at least one rail")
    kind = args.kind
    if kind == "constant":
        if args.current is None or args.duration is None:
            raise _UsageError("error: --kind constant requires --current and --duration")
        profile = constant_profile(args.current, args.voltage, args.duration, rails)
    elif kind == "step":
        missing = [
            flag for flag, value in
            (("--low", args.low), ("--high", args.high),
             ("--period", args.period), ("--count", args.count))
            if value is None
        ]
        if missing:
            raise _UsageError(f"error: --kind step requires {', '.join(missing)}")
        profile = step_profile(args.low, args.high, args.voltage, args.period,
                               args.count, rails)
    else:
        profile = ann_epoch_profile(
            v_volts=args.voltage, load_a=args.load_a, forward_a=args.forward_a,
            backward_a=args.backward_a, idle_a=args.idle_a,
            phase_ns=args.phase, epochs=args.epochs, rails=rails,
        )
    write_profile(profile, args.output)
    print(f"wrote {args.output} ({len(profile.phases)} phases)", file=sys.stderr)
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    store = TimeSeriesStore.reopen(args.store)
    try:
        key = SeriesKey(args.node, args.rail)
        energy = store.query_energy(key, args.t0, args.t1)
        power = store.query_avg_power(key, args.t0, args.t1)
    finally:
        store.close()
    print(json.dumps({
        "node": args.node,
        "rail": args.rail,
        "t0_ns": args.t0,
        "t1_ns": args.t1,
        "e_j": energy.value,
        "p_w": power.value,
        "found": energy.found,
    }, separators=(",", ":")))
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    store = TimeSeriesStore.reopen(args.store)
    try:
        keys = store.keys()
        if args.node:
            keys = [k for k in keys if k.node_id in set(args.node)]
        if args.rail:
            keys = [k for k in keys if k.rail_name in set(args.rail)]
        t1 = args.t1
        if t1 is None:
            last = max(
                (p.t_ns for k in keys for p in store.points(k, 0, 2**63 - 1)),
                default=0,
            )
            t1 = last + 1
        rows = export_csv(store, keys, args.t0, t1, args.output)
        print(f"wrote {args.output} ({rows} rows, {len(keys)} series)", file=sys.stderr)
        if args.plot:
            from .figures import render_export_figures

            out_dir = Path(args.output).resolve().parent
            for path in render_export_figures(store, keys, args.t0, t1, out_dir):
                print(f"wrote {path}", file=sys.stderr)
    finally:
        store.close()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"{parser.format_usage()}{exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"energymon: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
