"""Central telemetry hub: ingest, time-series store, queries, CSV export.

The store is an append-only JSON-lines log (the wire payload schema plus
an ingest timestamp) with in-memory per-(node, rail) indexes. Queries
use half-open [t0, t1) intervals and attribute each record wholly to the
interval containing its timestamp: records already represent complete
averaging windows, so there is no proration across edges.
"""

from __future__ import annotations

import csv
import json
import math
import os
import threading
import time
from bisect import bisect_left, insort
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from .collector import PAYLOAD_FIELDS, decode_record

STORE_FIELDS = PAYLOAD_FIELDS + ("ingest_t_ns",)

#: how far behind a series' newest timestamp a point may arrive
REORDER_HORIZON_NS = 10_000_000_000


class StoreCorruptError(ValueError):
    """Store file damaged beyond the recoverable trailing-line case."""


class SeriesKey(NamedTuple):
    node_id: str
    rail_name: str


class QueryResult(NamedTuple):
    value: float
    found: bool


@dataclass(frozen=True)
class StoredPoint:
    node_id: str
    rail_name: str
    t_ns: int
    i_amps: float
    v_volts: float
    e_joules: float
    window_ns: int
    seq: int
    ingest_t_ns: int

    @property
    def key(self) -> SeriesKey:
        return SeriesKey(self.node_id, self.rail_name)


def _point_to_line(p: StoredPoint) -> bytes:
    return json.dumps(
        {
            "node": p.node_id,
            "rail": p.rail_name,
            "ts_ns": p.t_ns,
            "i_a": p.i_amps,
            "v_v": p.v_volts,
            "e_j": p.e_joules,
            "window_ns": p.window_ns,
            "seq": p.seq,
            "ingest_t_ns": p.ingest_t_ns,
        },
        separators=(",", ":"),
    ).encode("utf-8") + b"\n"


def _point_from_line(line: bytes) -> StoredPoint:
    obj = json.loads(line.decode("utf-8"))
    if not isinstance(obj, dict) or set(obj) != set(STORE_FIELDS):
        raise ValueError(f"store line fields must be exactly {STORE_FIELDS}")
    return StoredPoint(
        node_id=str(obj["node"]),
        rail_name=str(obj["rail"]),
        t_ns=int(obj["ts_ns"]),
        i_amps=float(obj["i_a"]),
        v_volts=float(obj["v_v"]),
        e_joules=float(obj["e_j"]),
        window_ns=int(obj["window_ns"]),
        seq=int(obj["seq"]),
        ingest_t_ns=int(obj["ingest_t_ns"]),
    )


class TimeSeriesStore:
    """Append-only point log with per-series timestamp indexes.

    Concurrent appends and reads are safe; every query sees a
    point-in-time-consistent snapshot. Without a path the store is
    memory-only (used by tests and in-process simulation runs).
    """

    def __init__(self, path: str | os.PathLike[str] | None = None) -> None:
        self._series: dict[SeriesKey, list[StoredPoint]] = {}
        self._max_t: dict[SeriesKey, int] = {}
        self._lock = threading.Lock()
        self.late_reject_count = 0
        self.recovered_truncation_count = 0
        self.path = os.fspath(path) if path is not None else None
        self._fh = open(self.path, "ab") if self.path is not None else None

    @classmethod
    def reopen(cls, path: str | os.PathLike[str]) -> "TimeSeriesStore":
        """Rebuild a store from its log file, recovering a torn final line.

        A trailing line that is incomplete (no newline) or unparseable is
        truncated away and counted as one recovery warning; damage
        anywhere else raises StoreCorruptError.
        """
        path = os.fspath(path)
        with open(path, "rb") as fh:
            blob = fh.read()
        lines = blob.split(b"\n")
        tail = lines.pop()  # bytes after the final newline; b"" when complete
        points: list[StoredPoint] = []
        bad_final = tail != b""
        keep_bytes = len(blob) - len(tail) if bad_final else len(blob)
        for i, line in enumerate(lines):
            try:
                points.append(_point_from_line(line))
            except ValueError as exc:
                if i == len(lines) - 1 and not bad_final:
                    bad_final = True
                    keep_bytes -= len(line) + 1
                else:
                    raise StoreCorruptError(f"{path}: corrupt record at line {i + 1}: {exc}") from exc
        if bad_final:
            with open(path, "r+b") as fh:
                fh.truncate(keep_bytes)
        store = cls(path)
        store.recovered_truncation_count = 1 if bad_final else 0
        with store._lock:
            for p in points:
                store._index(p)
        return store

    def _index(self, p: StoredPoint) -> None:
        series = self._series.setdefault(p.key, [])
        insort(series, p, key=lambda q: q.t_ns)
        if p.t_ns > self._max_t.get(p.key, -1):
            self._max_t[p.key] = p.t_ns

    def append(self, p: StoredPoint) -> bool:
        """Index and persist a point; False when it is past the reorder horizon."""
        with self._lock:
            max_t = self._max_t.get(p.key)
            if max_t is not None and p.t_ns < max_t - REORDER_HORIZON_NS:
                self.late_reject_count += 1
                return False
            self._index(p)
            if self._fh is not None:
                self._fh.write(_point_to_line(p))
        return True

    def keys(self) -> list[SeriesKey]:
        with self._lock:
            return sorted(self._series)

    def point_count(self, key: SeriesKey | None = None) -> int:
        with self._lock:
            if key is not None:
                return len(self._series.get(key, ()))
            return sum(len(s) for s in self._series.values())

    def _slice(self, key: SeriesKey, t0_ns: int, t1_ns: int) -> list[StoredPoint] | None:
        # caller must hold self._lock
        series = self._series.get(key)
        if series is None:
            return None
        lo = bisect_left(series, t0_ns, key=lambda q: q.t_ns)
        hi = bisect_left(series, t1_ns, key=lambda q: q.t_ns)
        return series[lo:hi]

    def points(self, key: SeriesKey, t0_ns: int, t1_ns: int) -> list[StoredPoint]:
        """Points of one series with t_ns in [t0, t1), in timestamp order."""
        with self._lock:
            return self._slice(key, t0_ns, t1_ns) or []

    def query_energy(self, key: SeriesKey, t0_ns: int, t1_ns: int) -> QueryResult:
        """Sum of e_joules over [t0, t1); found=False for an unknown series."""
        if not t0_ns < t1_ns:
            raise ValueError(f"query interval must satisfy t0 < t1, got [{t0_ns}, {t1_ns})")
        with self._lock:
            selected = self._slice(key, t0_ns, t1_ns)
        if selected is None:
            return QueryResult(0.0, False)
        return QueryResult(math.fsum(p.e_joules for p in selected), True)

    def query_avg_power(self, key: SeriesKey, t0_ns: int, t1_ns: int) -> QueryResult:
        """Mean power in watts over [t0, t1)."""
        joules, found = self.query_energy(key, t0_ns, t1_ns)
        return QueryResult(joules / ((t1_ns - t0_ns) * 1e-9), found)

    def flush(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "TimeSeriesStore":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class TelemetryHub:
    """Validates wire records and ingests them, tracking loss and rejects.

    Sequence gaps per (node, rail) series count messages lost in
    transit; stale (non-advancing) sequence numbers are rejected so a
    replayed duplicate can never double-count energy.
    """

    def __init__(
        self,
        store: TimeSeriesStore,
        clock: Callable[[], int] = time.time_ns,
    ) -> None:
        self.store = store
        self._clock = clock
        self._last_seq: dict[SeriesKey, int] = {}
        self._loss: dict[SeriesKey, int] = {}
        self.accepted_count = 0
        self.parse_error_count = 0
        self.mismatch_count = 0
        self.stale_count = 0

    def ingest(self, payload: bytes, topic: str) -> StoredPoint | None:
        """Parse, cross-check against the topic, and store one record."""
        segments = topic.split("/")
        if len(segments) != 3 or segments[0] != "energymon" or "" in segments:
            self.mismatch_count += 1
            return None
        try:
            record = decode_record(payload)
        except ValueError:
            self.parse_error_count += 1
            return None
        if record.node_id != segments[1] or record.rail_name != segments[2]:
            self.mismatch_count += 1
            return None
        key = SeriesKey(record.node_id, record.rail_name)
        last = self._last_seq.get(key)
        if last is not None:
            if record.seq <= last:
                self.stale_count += 1
                return None
            if record.seq > last + 1:
                self._loss[key] = self._loss.get(key, 0) + record.seq - last - 1
        self._last_seq[key] = record.seq
        point = StoredPoint(
            node_id=record.node_id,
            rail_name=record.rail_name,
            t_ns=record.t_ns,
            i_amps=record.i_amps,
            v_volts=record.v_volts,
            e_joules=record.e_joules,
            window_ns=record.window_ns,
            seq=record.seq,
            ingest_t_ns=self._clock(),
        )
        if not self.store.append(point):
            return None
        self.accepted_count += 1
        return point

    def loss_count(self, key: SeriesKey | None = None) -> int:
        if key is not None:
            return self._loss.get(key, 0)
        return sum(self._loss.values())


def export_csv(
    store: TimeSeriesStore,
    keys: Iterable[SeriesKey],
    t0_ns: int,
    t1_ns: int,
    path: str | os.PathLike[str],
) -> int:
    """Write selected series to CSV; returns the number of data rows.

    Header ``node,rail,ts_ns,i_a,v_v,e_j,window_ns,seq``; rows ordered by
    (node, rail, ts_ns). Re-exporting the same selection is
    byte-identical.
    """
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "rail", "ts_ns", "i_a", "v_v", "e_j", "window_ns", "seq"])
        for key in sorted(set(keys)):
            for p in store.points(key, t0_ns, t1_ns):
                writer.writerow(
                    [p.node_id, p.rail_name, p.t_ns, p.i_amps, p.v_volts,
                     p.e_joules, p.window_ns, p.seq]
                )
                rows += 1
    return rows
