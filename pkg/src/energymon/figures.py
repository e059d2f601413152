"""Figure rendering for the report path.

Renders PNG files next to the delimited outputs: per-series power
traces from the store, and measured-vs-oracle energy bars from a
simulation report. Uses the Agg backend so it works headless.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .hub import SeriesKey, TimeSeriesStore  # noqa: E402
from .simulation import SimulationReport  # noqa: E402


def plot_power_series(
    store: TimeSeriesStore,
    keys: list[SeriesKey],
    t0_ns: int,
    t1_ns: int,
    out_path: str | os.PathLike[str],
) -> Path:
    """Per-window power (i*v) versus time for the selected series."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for key in keys:
        points = store.points(key, t0_ns, t1_ns)
        if not points:
            continue
        times_ms = [p.t_ns * 1e-6 for p in points]
        watts = [p.i_amps * p.v_volts for p in points]
        ax.step(times_ms, watts, where="post", label=f"{key.node_id}/{key.rail_name}")
    ax.set_xlabel("time [ms]")
    ax.set_ylabel("power [W]")
    ax.set_title("per-window rail power")
    if ax.has_data():
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_energy_bars(report: SimulationReport, out_path: str | os.PathLike[str]) -> Path:
    """Measured vs oracle energy per (node, rail) from a simulation report."""
    labels = [f"{row.node_id}/{row.rail_name}" for row in report.rows]
    measured = [row.measured_j for row in report.rows]
    oracle = [row.oracle_j for row in report.rows]
    x = range(len(labels))
    width = 0.4
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(labels) + 2), 4.5))
    ax.bar([i - width / 2 for i in x], measured, width, label="measured")
    ax.bar([i + width / 2 for i in x], oracle, width, label="oracle")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("energy [J]")
    ax.set_title("measured vs analytic energy")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_export_figures(
    store: TimeSeriesStore,
    keys: list[SeriesKey],
    t0_ns: int,
    t1_ns: int,
    out_dir: str | os.PathLike[str],
) -> list[Path]:
    """Figures accompanying a CSV export; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [plot_power_series(store, keys, t0_ns, t1_ns, out_dir / "power_series.png")]


def render_report_figures(
    report: SimulationReport,
    out_dir: str | os.PathLike[str],
) -> list[Path]:
    """Figures accompanying a simulation report; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [plot_energy_bars(report, out_dir / "energy_summary.png")]
    if report.store is not None and report.t_end_ns > 0:
        keys = [SeriesKey(r.node_id, r.rail_name) for r in report.rows]
        written.append(
            plot_power_series(
                report.store, keys, 0, report.t_end_ns, out_dir / "power_series.png"
            )
        )
    return written
