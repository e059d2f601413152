"""Shared builders for the test suite."""

from energymon import (
    AdcSpec,
    ChannelKind,
    ChannelSpec,
    FsmConfig,
    NodeConfig,
    constant_profile,
    default_board_channels,
)
from energymon.crossbar import CrossbarMap

DEFAULT_ADC = AdcSpec()  # 12 bit, 3.3 V, 1 us

CURRENT_SPEC = ChannelSpec(
    channel_id=0,
    rail_name="vdd_core",
    kind=ChannelKind.CURRENT,
    r_shunt_ohm=0.01,
    cond_gain=100.0,
    nominal_voltage_v=0.85,
)

VOLTAGE_SPEC = ChannelSpec(
    channel_id=1,
    rail_name="vdd_core",
    kind=ChannelKind.VOLTAGE,
    divider_ratio=1.0,
    nominal_voltage_v=0.85,
)


def make_node(
    node_id="n1",
    rails=tuple(f"rail{i}" for i in range(8)),
    profile=None,
    fsm=None,
    **kwargs,
) -> NodeConfig:
    """Default 16-channel node (8 rails x current+voltage, identity crossbar)."""
    fsm = fsm or FsmConfig()
    profile = profile or constant_profile(2.0, 0.85, 100_000_000, rails)
    return NodeConfig(
        node_id=node_id,
        channels=default_board_channels(rails),
        crossbar=CrossbarMap.identity(2 * len(rails)),
        fsm=fsm,
        profile=profile,
        **kwargs,
    )
