"""Room and sensor simulation, plus the trace CSV format.

The room follows a piecewise-linear slew: during each schedule segment the
temperature moves toward the segment's target at a constant rate and holds
once it gets there. The receiver's sensor adds a fixed chassis offset and
optional Gaussian noise, then floors to its resolution.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ScheduleError, TraceError, TraceFormatError

ROOM_TRUE = "room_true"
SENSOR_QUANTIZED = "sensor_quantized"
SMOOTHED = "smoothed"
TRACE_KINDS = (ROOM_TRUE, SENSOR_QUANTIZED, SMOOTHED)

CSV_HEADER = ("t_seconds", "temp_c", "kind")

# tolerance used when flooring, so 29.999999999 from float arithmetic reads 30
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class EnvironmentModel:
    """Room response to the transmitter plus the receiver's sensor error terms.

    Rates are in degC per minute. ``ambient_temp`` is where the room starts.
    """

    ascent_rate: float = 1.23
    descent_rate: float = -1.24
    ambient_temp: float = 23.0
    sensor_offset: float = 4.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.ascent_rate > 0:
            raise ValueError(f"ascent_rate must be positive, got {self.ascent_rate}")
        if not self.descent_rate < 0:
            raise ValueError(f"descent_rate must be negative, got {self.descent_rate}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")

    @property
    def max_rate(self) -> float:
        return max(self.ascent_rate, -self.descent_rate)


@dataclass(frozen=True)
class SensorModel:
    resolution_gamma: float = 1.0
    sample_rate: float = 3.3

    def __post_init__(self):
        if not self.resolution_gamma > 0:
            raise ValueError("resolution_gamma must be positive")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class Segment:
    """One transmitter command: hold ``target`` for ``duration`` seconds.

    With ``until_reached`` the segment ends as soon as the room reaches the
    target, and ``duration`` acts as a timeout.
    """

    duration: float
    target: float
    until_reached: bool = False


@dataclass(frozen=True)
class TargetSchedule:
    segments: tuple[Segment, ...]

    def __init__(self, segments: Iterable[Segment | tuple]):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in segments)
        object.__setattr__(self, "segments", segs)

    def validate(self) -> None:
        if not self.segments:
            raise ScheduleError("schedule is empty")
        for k, seg in enumerate(self.segments):
            if not (seg.duration > 0 and math.isfinite(seg.duration)):
                raise ScheduleError(f"segment {k}: duration must be positive, got {seg.duration}")
            if not math.isfinite(seg.target):
                raise ScheduleError(f"segment {k}: target is not finite")

    def __add__(self, other: "TargetSchedule") -> "TargetSchedule":
        return TargetSchedule(self.segments + other.segments)

    def __len__(self):
        return len(self.segments)

    @property
    def nominal_duration(self) -> float:
        """Sum of segment durations (timeouts count in full)."""
        return float(sum(s.duration for s in self.segments))

    def as_pairs(self) -> list[tuple[float, float]]:
        return [(s.duration, s.target) for s in self.segments]


@dataclass(frozen=True, eq=False)
class TemperatureTrace:
    sample_rate: float
    t0: float
    samples: np.ndarray
    kind: str = ROOM_TRUE
    gamma: float | None = None  # set for sensor_quantized traces
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise TraceError("trace must be a non-empty 1-d sequence")
        if self.kind not in TRACE_KINDS:
            raise TraceError(f"unknown trace kind {self.kind!r}")
        if not self.sample_rate > 0:
            raise TraceError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, TemperatureTrace):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.sample_rate == other.sample_rate
            and self.t0 == other.t0
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def index_at(self, t: float) -> int:
        return int(round((t - self.t0) * self.sample_rate))

    def with_samples(self, samples, kind: str | None = None, t0: float | None = None):
        return TemperatureTrace(
            self.sample_rate,
            self.t0 if t0 is None else t0,
            samples,
            self.kind if kind is None else kind,
            self.gamma,
            dict(self.meta),
        )


def quantize(x, gamma: float):
    """Floor to the nearest lower multiple of ``gamma``."""
    k = np.floor(np.asarray(x, dtype=float) / gamma + _FLOOR_EPS)
    return k * gamma


def simulate_room(
    schedule: TargetSchedule,
    env: EnvironmentModel,
    sample_rate: float,
    t0: float = 0.0,
    start_temp: float | None = None,
) -> TemperatureTrace:
    """Room temperature sampled at ``sample_rate`` while ``schedule`` plays.

    Uses the closed form of the slew within each segment, so the result is
    exact at every sample instant. ``meta['segment_times']`` records the
    actual (start, end) of each segment, which differs from the nominal
    duration only for ``until_reached`` segments.
    """
    schedule.validate()
    if not sample_rate > 0:
        raise ScheduleError("sample_rate must be positive")

    up = env.ascent_rate / 60.0
    down = env.descent_rate / 60.0
    temp = env.ambient_temp if start_temp is None else float(start_temp)

    # resolve segment boundaries first; until_reached segments may end early
    bounds = []
    t = 0.0
    for seg in schedule.segments:
        gap = seg.target - temp
        rate = up if gap > 0 else down
        reach = gap / rate if gap != 0 else 0.0
        length = seg.duration
        if seg.until_reached:
            # at least one sample period so the segment is never empty
            length = min(seg.duration, max(reach, 1.0 / sample_rate))
        bounds.append((t, t + length, temp, seg.target, rate))
        temp = seg.target if reach <= length else temp + rate * length
        t += length
    total = t

    n = int(math.floor(total * sample_rate + 1e-9)) + 1
    times = np.arange(n) / sample_rate
    out = np.empty(n)
    for k, (start, end, temp0, target, rate) in enumerate(bounds):
        last = k == len(bounds) - 1
        mask = (times >= start) & ((times <= end) if last else (times < end))
        el = times[mask] - start
        moved = temp0 + rate * el
        out[mask] = np.minimum(moved, target) if rate > 0 else np.maximum(moved, target)

    trace = TemperatureTrace(sample_rate, t0, out, ROOM_TRUE)
    trace.meta["segment_times"] = [(t0 + b[0], t0 + b[1]) for b in bounds]
    trace.meta["end_temp"] = temp
    return trace


def sense(room: TemperatureTrace, sensor: SensorModel, env: EnvironmentModel) -> TemperatureTrace:
    """What the receiver's sensor reports for a room trace."""
    if room.kind != ROOM_TRUE:
        raise TraceError(f"sense expects a room_true trace, got {room.kind}")
    ratio = room.sample_rate / sensor.sample_rate
    if ratio < 1 - 1e-9:
        raise TraceError(
            f"sensor rate {sensor.sample_rate} Hz exceeds room trace rate {room.sample_rate} Hz"
        )
    n_out = int(math.floor((len(room) - 1) / ratio + 1e-9)) + 1
    idx = np.minimum(np.rint(np.arange(n_out) * ratio).astype(int), len(room) - 1)
    values = room.samples[idx] + env.sensor_offset
    if env.noise_sigma > 0:
        rng = np.random.default_rng(int(env.rng_seed))
        values = values + rng.normal(0.0, env.noise_sigma, size=values.size)
    out = TemperatureTrace(
        sensor.sample_rate, room.t0, quantize(values, sensor.resolution_gamma),
        SENSOR_QUANTIZED, sensor.resolution_gamma, dict(room.meta),
    )
    return out


# --- CSV ------------------------------------------------------------------

def export_trace(trace: TemperatureTrace, destination) -> None:
    """Write ``trace`` as CSV to a path or an open text stream."""
    export_traces([trace], destination)


def _write_blocks(traces: Sequence[TemperatureTrace], fh: TextIO) -> None:
    fh.write(",".join(CSV_HEADER) + "\n")
    for trace in traces:
        for t, v in zip(trace.times, trace.samples):
            fh.write(f"{t:.6f},{v:.6f},{trace.kind}\n")


def export_traces(traces: Sequence[TemperatureTrace], destination) -> None:
    """Several traces of different kinds in one file, one block after another."""
    if hasattr(destination, "write"):
        _write_blocks(traces, destination)
        return
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        _write_blocks(traces, fh)


def _parse_rows(fh: TextIO, name: str) -> dict[str, tuple[list[float], list[float], int]]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError(f"{name}: empty file", line=1) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise TraceFormatError(f"{name}: bad header {header!r}, expected {','.join(CSV_HEADER)}", line=1)

    blocks: dict[str, tuple[list[float], list[float], int]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise TraceFormatError(f"{name}: expected 3 fields, got {len(row)}", line=lineno)
        kind = row[2].strip()
        if kind not in TRACE_KINDS:
            raise TraceFormatError(f"{name}: unknown kind {kind!r}", line=lineno)
        try:
            t = float(row[0])
            v = float(row[1])
        except ValueError:
            raise TraceFormatError(f"{name}: non-numeric value in {row!r}", line=lineno) from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise TraceFormatError(f"{name}: non-finite value in {row!r}", line=lineno)
        ts, vs, _ = blocks.setdefault(kind, ([], [], lineno))
        if ts and t <= ts[-1]:
            raise TraceFormatError(f"{name}: time not increasing ({t} after {ts[-1]})", line=lineno)
        ts.append(t)
        vs.append(v)
    if not blocks:
        raise TraceFormatError(f"{name}: empty trace", line=2)
    return blocks


def _block_to_trace(ts: list[float], vs: list[float], kind: str, name: str, first_line: int,
                    sample_rate: float | None) -> TemperatureTrace:
    if sample_rate is None:
        if len(ts) < 2:
            raise TraceFormatError(f"{name}: cannot infer sample rate from one row; pass sample_rate",
                                   line=first_line)
        sample_rate = round((len(ts) - 1) / (ts[-1] - ts[0]), 6)
    expected = ts[0] + np.arange(len(ts)) / sample_rate
    bad = np.flatnonzero(np.abs(np.asarray(ts) - expected) > max(2e-6, 0.01 / sample_rate))
    if bad.size:
        raise TraceFormatError(f"{name}: irregular sample spacing", line=first_line + int(bad[0]))
    return TemperatureTrace(sample_rate, ts[0], np.asarray(vs), kind)


def import_traces(source, sample_rate: float | None = None) -> dict[str, TemperatureTrace]:
    """All traces in a CSV file, keyed by kind."""
    name = getattr(source, "name", "<stream>") if hasattr(source, "read") else str(source)
    if hasattr(source, "read"):
        blocks = _parse_rows(source, name)
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            blocks = _parse_rows(fh, name)
    return {
        kind: _block_to_trace(ts, vs, kind, name, first, sample_rate)
        for kind, (ts, vs, first) in blocks.items()
    }


def import_trace(source, kind: str | None = None, sample_rate: float | None = None) -> TemperatureTrace:
    """Read one trace back from CSV.

    A file may carry several kinds (the ``encode`` command writes room and
    sensor traces together); ``kind`` picks one, otherwise the file must hold
    exactly one, or the sensor trace is preferred.
    """
    traces = import_traces(source, sample_rate)
    if kind is not None:
        if kind not in traces:
            raise TraceFormatError(f"no {kind} rows in {source}", line=1)
        return traces[kind]
    if len(traces) == 1:
        return next(iter(traces.values()))
    for pref in (SENSOR_QUANTIZED, SMOOTHED, ROOM_TRUE):
        if pref in traces:
            return traces[pref]
    raise AssertionError("unreachable")


def trace_to_csv_text(*traces: TemperatureTrace) -> str:
    buf = io.StringIO()
    _write_blocks(traces, buf)
    return buf.getvalue()
