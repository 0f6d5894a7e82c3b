"""Operating-snapshot data model, normalization, and CSV ingestion.

A snapshot is the vector of all generator / renewable / load node power
values (MW) at one instant; a series is a time-ordered stack of snapshots
with a shared node layout. Storage-capable load nodes may carry negative
values (discharge).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSnapshot, EmptyInput, OrderError, ParseError


@dataclass(frozen=True)
class Snapshot:
    """One operating snapshot: node powers in MW at a single timestamp."""

    timestamp: float
    gen_traditional: tuple
    gen_renewable: tuple
    loads: tuple

    def __post_init__(self):
        object.__setattr__(self, "gen_traditional", tuple(float(v) for v in self.gen_traditional))
        object.__setattr__(self, "gen_renewable", tuple(float(v) for v in self.gen_renewable))
        object.__setattr__(self, "loads", tuple(float(v) for v in self.loads))
        if self.node_count < 2:
            raise ValueError("snapshot needs at least 2 nodes in total")
        for v in self.values():
            if not math.isfinite(v):
                raise ValueError(f"non-finite power value {v!r} at t={self.timestamp}")

    @property
    def node_count(self) -> int:
        return len(self.gen_traditional) + len(self.gen_renewable) + len(self.loads)

    def values(self) -> tuple:
        """All node values in column order: traditional, renewable, loads."""
        return self.gen_traditional + self.gen_renewable + self.loads

    def array(self) -> np.ndarray:
        return np.asarray(self.values(), dtype=np.float64)


@dataclass(frozen=True)
class NormalizedSnapshot:
    """Unitless snapshot values in [-1, 1] plus the MW divisor used."""

    values: tuple
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        for v in self.values:
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"normalized value {v} outside [-1, 1]")

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class ScenarioSeries:
    """Time-ordered snapshots with identical node layout.

    ``labels`` holds ground-truth regime ids and is only present for
    synthetic data; ``resolution`` is the spacing in seconds (0 for a
    single-snapshot series).
    """

    snapshots: tuple
    resolution: float = 0.0
    labels: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        if not self.snapshots:
            raise EmptyInput("series needs at least one snapshot")
        layout = self.layout
        prev_ts = None
        for s in self.snapshots:
            if (len(s.gen_traditional), len(s.gen_renewable), len(s.loads)) != layout:
                raise ValueError("all snapshots must share the same node layout")
            if prev_ts is not None and s.timestamp <= prev_ts:
                raise OrderError(f"timestamps not strictly increasing at t={s.timestamp}")
            prev_ts = s.timestamp
        if self.labels is not None and len(self.labels) != len(self.snapshots):
            raise ValueError("labels length must match snapshot count")

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def layout(self) -> tuple:
        """(traditional, renewable, load) node counts."""
        first = self.snapshots[0]
        return (len(first.gen_traditional), len(first.gen_renewable), len(first.loads))

    @property
    def node_count(self) -> int:
        return sum(self.layout)

    def matrix(self) -> np.ndarray:
        """(t, m) array of raw MW values."""
        return np.stack([s.array() for s in self.snapshots])

    def timestamps(self) -> np.ndarray:
        return np.asarray([s.timestamp for s in self.snapshots])


@dataclass(frozen=True)
class TypicalScenario:
    """A representative snapshot standing for one cluster of snapshots."""

    id: int
    representative: Snapshot
    feature_centroid: tuple
    member_count: int
    mixture_weight: float

    def __post_init__(self):
        object.__setattr__(self, "feature_centroid", tuple(float(v) for v in self.feature_centroid))
        if self.member_count < 1:
            raise ValueError("typical scenario must have at least one member")
        if not 0.0 < self.mixture_weight <= 1.0:
            raise ValueError("mixture weight must lie in (0, 1]")


def normalize_snapshot(s: Snapshot) -> NormalizedSnapshot:
    """Scale a snapshot into [-1, 1] by its maximum absolute node value.

    Dividing by max(|v|) rather than max(v) is required for series with
    negative storage values; the target interval would otherwise be
    violated. Raises DegenerateSnapshot for an all-zero snapshot (a
    blackout row is a data-quality event, not a scenario).
    """
    vals = s.values()
    scale = max(abs(v) for v in vals)
    if scale == 0.0:
        raise DegenerateSnapshot(f"all-zero snapshot at t={s.timestamp}")
    return NormalizedSnapshot(tuple(v / scale for v in vals), scale)


def normalize_series(series: ScenarioSeries, scope: str = "snapshot") -> list:
    """Normalize every snapshot; scope 'snapshot' (default) or 'series'.

    Series scope divides all rows by one global max-|v|, an escape hatch
    for workflows that want cross-snapshot magnitudes preserved.
    """
    if scope == "snapshot":
        return [normalize_snapshot(s) for s in series.snapshots]
    if scope == "series":
        scale = max(max(abs(v) for v in s.values()) for s in series.snapshots)
        if scale == 0.0:
            raise DegenerateSnapshot("all-zero series")
        return [
            NormalizedSnapshot(tuple(v / scale for v in s.values()), scale)
            for s in series.snapshots
        ]
    raise ValueError(f"unknown normalization scope {scope!r}")


def _format_value(v: float) -> str:
    # repr round-trips exactly; integral floats render compactly
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def csv_header(layout: tuple, with_labels: bool) -> list:
    g, r, l = layout
    cols = ["timestamp"]
    cols += [f"G_{j}" for j in range(1, g + 1)]
    cols += [f"R_{j}" for j in range(1, r + 1)]
    cols += [f"L_{j}" for j in range(1, l + 1)]
    if with_labels:
        cols.append("label")
    return cols


def _parse_header(header: list) -> tuple:
    if not header or header[0] != "timestamp":
        raise ParseError("first column must be 'timestamp'", row=1)
    g = r = l = 0
    idx = 1
    for prefix in ("G_", "R_", "L_"):
        count = 0
        while idx < len(header) and header[idx] == f"{prefix}{count + 1}":
            count += 1
            idx += 1
        if prefix == "G_":
            g = count
        elif prefix == "R_":
            r = count
        else:
            l = count
    with_labels = False
    if idx < len(header):
        if header[idx] == "label" and idx == len(header) - 1:
            with_labels = True
            idx += 1
        else:
            raise ParseError(f"unexpected column {header[idx]!r}", row=1)
    if g + r + l < 2:
        raise ParseError("header describes fewer than 2 power columns", row=1)
    return (g, r, l), with_labels


def load_series(path) -> ScenarioSeries:
    """Read a snapshot series from CSV.

    Expected schema: header ``timestamp,G_1..G_g,R_1..R_r,L_1..L_l`` with
    an optional trailing ``label`` column; one snapshot per row. Raises
    ParseError with the offending row number, OrderError for shuffled
    timestamps.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: empty file") from None
        (g, r, l), with_labels = _parse_header([c.strip() for c in header])
        m = g + r + l
        expected = 1 + m + (1 if with_labels else 0)
        snapshots = []
        labels = [] if with_labels else None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected:
                raise ParseError(
                    f"row {row_no}: expected {expected} columns, got {len(row)}", row=row_no
                )
            try:
                ts = float(row[0])
                vals = [float(c) for c in row[1 : 1 + m]]
            except ValueError as exc:
                raise ParseError(f"row {row_no}: {exc}", row=row_no) from None
            if with_labels:
                try:
                    labels.append(int(row[-1]))
                except ValueError as exc:
                    raise ParseError(f"row {row_no}: {exc}", row=row_no) from None
            try:
                snapshots.append(
                    Snapshot(ts, tuple(vals[:g]), tuple(vals[g : g + r]), tuple(vals[g + r :]))
                )
            except ValueError as exc:
                raise ParseError(f"row {row_no}: {exc}", row=row_no) from None
    if not snapshots:
        raise EmptyInput(f"{path}: no snapshot rows")
    resolution = snapshots[1].timestamp - snapshots[0].timestamp if len(snapshots) > 1 else 0.0
    return ScenarioSeries(tuple(snapshots), resolution=resolution, labels=labels)


def save_series(series: ScenarioSeries, path) -> None:
    """Write a series in the same CSV schema load_series reads.

    Values are emitted with round-trippable formatting so that a
    save/load cycle reproduces the series bit-exactly.
    """
    with_labels = series.labels is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(series.layout, with_labels))
        for i, s in enumerate(series.snapshots):
            row = [_format_value(s.timestamp)]
            row += [_format_value(v) for v in s.values()]
            if with_labels:
                row.append(str(series.labels[i]))
            writer.writerow(row)
