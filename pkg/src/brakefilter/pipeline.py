"""Trace ingestion and car-following event extraction.

Trace files are UTF-8 CSV::

    # units=si hz=10
    t,v_ego,v_prec,range,curvature,turn_signal,cut_in,brake,throttle
    0.0,25.0,25.0,50.0,0.0002,0,0,0,12.5
    ...

``turn_signal`` is 0/1/2 (none/left/right); ``cut_in`` and ``brake`` are 0/1.
"""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .core import AUG_DIM, BRAKE_INDEX, OBS_DIM, AugmentedSample, ObservationVector, compute_feature_matrix
from .errors import MonotonicityError, ParseError, SchemaError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "v_ego", "v_prec", "range", "curvature", "turn_signal", "cut_in", "brake", "throttle")
EVENT_COLUMNS = ("event", "source", "t", "range", "ego_speed", "relative_speed", "ttc", "brake")
EVENTS_MAGIC = "# brakefilter-events v1 units=si"
MAX_EGO_SPEED = 45.0


class TurnSignal(IntEnum):
    NONE = 0
    LEFT = 1
    RIGHT = 2


@dataclass(frozen=True)
class RawTick:
    t: float
    ego_speed: float
    preceding_speed: float
    range: float
    curvature: float
    turn_signal: TurnSignal
    cut_in: bool
    brake: int
    throttle: float


@dataclass(frozen=True)
class SegmentationRules:
    max_range: float = 120.0
    min_range: float = 10.0
    min_speed: float = 5.0
    max_curvature: float = 1e-3
    min_duration: float = 50.0
    max_gap: float = 0.25
    min_events: int = 500


@dataclass(frozen=True, eq=False)
class CarFollowingEvent:
    """One extracted event; ``zeta`` rows are ``[range, v_ego, dv, ttc, brake]``."""

    zeta: np.ndarray
    t: np.ndarray
    source_trace: str = ""

    @property
    def start_t(self):
        return float(self.t[0])

    @property
    def end_t(self):
        return float(self.t[-1])

    @property
    def duration(self):
        return self.end_t - self.start_t

    @property
    def xi(self):
        return self.zeta[:, :OBS_DIM]

    @property
    def brake(self):
        return self.zeta[:, BRAKE_INDEX].astype(np.int64)

    @property
    def ticks(self):
        return [AugmentedSample(ObservationVector.from_array(row[:OBS_DIM]), int(row[BRAKE_INDEX]))
                for row in self.zeta]

    def __len__(self):
        return self.zeta.shape[0]


@dataclass(frozen=True, eq=False)
class DriverDataset:
    driver_id: str
    events: list = field(default_factory=list)

    @property
    def event_count(self):
        return len(self.events)

    @property
    def tick_count(self):
        return sum(len(e) for e in self.events)

    @property
    def brake_fraction(self):
        n = self.tick_count
        if n == 0:
            return 0.0
        return sum(int(e.brake.sum()) for e in self.events) / n


@dataclass(frozen=True)
class Rejection:
    driver_id: str
    event_count: int
    min_events: int


# --------------------------------------------------------------------------
# trace files
# --------------------------------------------------------------------------

def _parse_sidecar(line):
    if not line.startswith("#"):
        raise SchemaError("first line must be the '# units=si hz=<rate>' sidecar")
    fields = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if sep:
            fields[key] = value
    if fields.get("units") != "si":
        raise SchemaError(f"units must be 'si', got {fields.get('units')!r}")
    try:
        hz = float(fields["hz"])
    except (KeyError, ValueError):
        raise SchemaError("sidecar must declare a numeric hz") from None
    if not hz > 0:
        raise SchemaError("hz must be positive")
    return hz


def _flag(value, name, allowed, line):
    try:
        v = int(value)
    except ValueError:
        raise ParseError(f"{name} must be an integer, got {value!r}", line) from None
    if v not in allowed:
        raise ParseError(f"{name} must be one of {sorted(allowed)}, got {v}", line)
    return v


def _real(value, name, line):
    try:
        v = float(value)
    except ValueError:
        raise ParseError(f"{name} is not a number: {value!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"{name} is not finite", line)
    return v


def parse_trace(text, source="<string>"):
    """Parse trace CSV text into :class:`RawTick` records."""
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{source}: empty file")
    _parse_sidecar(lines[0].strip())
    if len(lines) < 2 or tuple(c.strip() for c in lines[1].split(",")) != TRACE_COLUMNS:
        raise SchemaError(f"{source}: header must be exactly {','.join(TRACE_COLUMNS)}")

    ticks = []
    prev_t = None
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(TRACE_COLUMNS):
            raise ParseError(f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}", lineno)
        t = _real(row[0], "t", lineno)
        v_ego = _real(row[1], "v_ego", lineno)
        v_prec = _real(row[2], "v_prec", lineno)
        rng = _real(row[3], "range", lineno)
        curv = _real(row[4], "curvature", lineno)
        turn = _flag(row[5], "turn_signal", {0, 1, 2}, lineno)
        cut = _flag(row[6], "cut_in", {0, 1}, lineno)
        brake = _flag(row[7], "brake", {0, 1}, lineno)
        throttle = _real(row[8], "throttle", lineno)
        if not 0.0 <= v_ego <= MAX_EGO_SPEED:
            raise ParseError(f"v_ego {v_ego} outside [0, {MAX_EGO_SPEED}]", lineno)
        if v_prec < 0:
            raise ParseError(f"v_prec {v_prec} is negative", lineno)
        if rng < 0:
            raise ParseError(f"range {rng} is negative", lineno)
        if not 0.0 <= throttle <= 100.0:
            raise ParseError(f"throttle {throttle} outside [0, 100]", lineno)
        if prev_t is not None and t <= prev_t:
            kind = "duplicate" if t == prev_t else "decreasing"
            raise MonotonicityError(f"{kind} timestamp {t} after {prev_t}", lineno)
        prev_t = t
        ticks.append(RawTick(t, v_ego, v_prec, rng, curv, TurnSignal(turn), bool(cut), brake, throttle))
    return ticks


def load_trace(path):
    """Read and validate one trace file (see module docstring for the format)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read(), source=str(path))


def format_trace(ticks, hz=10.0):
    buf = io.StringIO()
    hz_text = f"{hz:g}"
    buf.write(f"# units=si hz={hz_text}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for k in ticks:
        writer.writerow([
            repr(float(k.t)), repr(float(k.ego_speed)), repr(float(k.preceding_speed)),
            repr(float(k.range)), repr(float(k.curvature)), int(k.turn_signal), int(bool(k.cut_in)),
            int(k.brake), repr(float(k.throttle)),
        ])
    return buf.getvalue()


def write_trace(ticks, path, hz=10.0):
    atomic_write_text(path, format_trace(ticks, hz))


def trace_arrays(ticks):
    """Column arrays for a tick list, keyed by :data:`TRACE_COLUMNS` names."""
    return {
        "t": np.array([k.t for k in ticks], dtype=float),
        "v_ego": np.array([k.ego_speed for k in ticks], dtype=float),
        "v_prec": np.array([k.preceding_speed for k in ticks], dtype=float),
        "range": np.array([k.range for k in ticks], dtype=float),
        "curvature": np.array([k.curvature for k in ticks], dtype=float),
        "turn_signal": np.array([int(k.turn_signal) for k in ticks], dtype=np.int64),
        "cut_in": np.array([bool(k.cut_in) for k in ticks], dtype=bool),
        "brake": np.array([int(k.brake) for k in ticks], dtype=np.int64),
    }


# --------------------------------------------------------------------------
# segmentation
# --------------------------------------------------------------------------

def compliant_mask(cols, rules):
    return (
        (cols["range"] >= rules.min_range)
        & (cols["range"] < rules.max_range)
        & (cols["v_ego"] >= rules.min_speed)
        & (cols["turn_signal"] == TurnSignal.NONE)
        & ~cols["cut_in"]
        & (np.abs(cols["curvature"]) <= rules.max_curvature)
    )


def compliant_runs(cols, rules):
    """``(start, stop)`` index pairs of maximal compliant, gap-free runs."""
    ok = compliant_mask(cols, rules)
    n = ok.size
    if n == 0:
        return []
    t = cols["t"]
    joined = np.zeros(n, dtype=bool)
    joined[1:] = ok[1:] & ok[:-1] & (np.diff(t) <= rules.max_gap)
    starts = np.flatnonzero(ok & ~joined)
    stops = np.flatnonzero(ok & ~np.append(joined[1:], False)) + 1
    return [(int(s), int(e)) for s, e in zip(starts, stops)]


def segment_events(ticks, rules=None, source=""):
    """Split a trace into car-following events.

    An event is a maximal run of consecutive ticks that all satisfy the range,
    speed, lane and curvature predicates with no sampling gap above
    ``rules.max_gap``; it is kept only if it lasts strictly longer than
    ``rules.min_duration`` seconds.
    """
    rules = rules or SegmentationRules()
    if not ticks:
        return []
    cols = ticks if isinstance(ticks, dict) else trace_arrays(ticks)
    events = []
    for s, e in compliant_runs(cols, rules):
        t = cols["t"][s:e]
        if t[-1] - t[0] <= rules.min_duration:
            continue
        xi = compute_feature_matrix(cols["range"][s:e], cols["v_ego"][s:e], cols["v_prec"][s:e])
        zeta = np.column_stack([xi, cols["brake"][s:e].astype(float)])
        events.append(CarFollowingEvent(zeta, t.copy(), source))
    return events


def build_dataset(events, driver_id, min_events=500):
    """Admit a driver with at least ``min_events`` events, else return a :class:`Rejection`."""
    events = list(events)
    if len(events) < min_events:
        logger.info("driver %s rejected: %d events < %d", driver_id, len(events), min_events)
        return Rejection(driver_id, len(events), min_events)
    return DriverDataset(driver_id, events)


# --------------------------------------------------------------------------
# segmented-event files
# --------------------------------------------------------------------------

def format_events(events):
    buf = io.StringIO()
    buf.write(EVENTS_MAGIC + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for idx, ev in enumerate(events):
        for t, row in zip(ev.t, ev.zeta):
            writer.writerow([idx, ev.source_trace, repr(float(t))] + [repr(float(v)) for v in row[:OBS_DIM]]
                            + [int(row[BRAKE_INDEX])])
    return buf.getvalue()


def write_events(events, path):
    atomic_write_text(path, format_events(events))


def parse_events(text, source="<string>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != EVENTS_MAGIC:
        raise SchemaError(f"{source}: missing '{EVENTS_MAGIC}' first line")
    if len(lines) < 2 or tuple(c.strip() for c in lines[1].split(",")) != EVENT_COLUMNS:
        raise SchemaError(f"{source}: header must be exactly {','.join(EVENT_COLUMNS)}")
    groups = {}
    order = []
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row:
            continue
        if len(row) != len(EVENT_COLUMNS):
            raise ParseError(f"expected {len(EVENT_COLUMNS)} fields, got {len(row)}", lineno)
        key = row[0]
        if key not in groups:
            groups[key] = (row[1], [], [])
            order.append(key)
        _, ts, rows = groups[key]
        t = _real(row[2], "t", lineno)
        if ts and t <= ts[-1]:
            raise MonotonicityError(f"event {key}: timestamp {t} not increasing", lineno)
        ts.append(t)
        rows.append([_real(v, EVENT_COLUMNS[3 + i], lineno) for i, v in enumerate(row[3:7])]
                    + [float(_flag(row[7], "brake", {0, 1}, lineno))])
    return [CarFollowingEvent(np.array(groups[k][2]).reshape(-1, AUG_DIM), np.array(groups[k][1]), groups[k][0])
            for k in order]


def load_events(path):
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh.read(), source=str(path))


def is_events_file(path):
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip() == EVENTS_MAGIC


def expand_inputs(paths):
    """Files named directly plus ``*.csv`` inside directories, sorted per directory."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix == ".csv" and q.is_file()))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(os.fspath(p))
    return out


def collect_events(paths, rules=None):
    """Events from a mix of raw trace files and segmented-event files."""
    events = []
    for path in expand_inputs(paths):
        if is_events_file(path):
            events.extend(load_events(path))
        else:
            events.extend(segment_events(load_trace(path), rules, source=path.name))
    return events
