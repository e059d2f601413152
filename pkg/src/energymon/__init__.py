"""Desk-scale runtime energy monitor.

Simulates a shunt-based measurement board and the FPGA-side averaging
logic for soft-core power rails, runs the monitor-firmware and
energy-collector services per node, transports telemetry over a
self-contained MQTT 3.1.1 subset, and aggregates everything in a
central hub with an analytic ground-truth oracle for validation.
"""

from .avgfsm import AveragedSample, AvgSampleFsm, FsmConfig, RegisterBank, t_avg
from .collector import EnergyCollector, EnergyRecord, RailAccumulator, decode_record, encode_record, energy_of
from .crossbar import CrossbarMap, parse_crossbar_config, serialize_crossbar
from .firmware import Mailbox, PhysicalSample, RuntimeMonitor, code_to_adc_voltage, reconstruct_current, reconstruct_voltage
from .hub import SeriesKey, StoredPoint, TelemetryHub, TimeSeriesStore, export_csv
from .profiles import Phase, WorkloadProfile, ann_epoch_profile, constant_profile, gen_profile, step_profile
from .sensing import AdcSpec, Board, ChannelKind, ChannelSpec, GaussianNoise, RawSample, quantize, sample_channel
from .simulation import (
    NodeConfig,
    SimulatedNode,
    SimulationReport,
    VirtualClock,
    default_board_channels,
    run_simulation,
)

__version__ = "0.1.0"
