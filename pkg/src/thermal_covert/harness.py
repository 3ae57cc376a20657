"""End-to-end loopback runs and parameter sweeps on a simulated clock."""

from __future__ import annotations

import csv
import dataclasses
import io
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .framing import (
    DEFAULT_OPCODES, PREAMBLE, EventKind, OpcodeTable, ReceptionWindow, build_frame,
    frame_schedule, payload_from_hex, preamble_grid, rx_state_machine,
)
from .modem import ChannelParams, decode_bits, maf_smooth
from .thermal_env import (
    EnvironmentModel, Segment, SensorModel, TargetSchedule, TemperatureTrace, sense, simulate_room,
)

SWEEP_COLUMNS = ("param", "value", "seed", "ber", "accepted", "bph")

# quiet time around a frame, seconds
LEAD_IN = 600.0
TAIL_SLOTS = 2


@dataclass(frozen=True)
class ExperimentSpec:
    channel: ChannelParams = field(default_factory=ChannelParams)
    environment: EnvironmentModel = field(default_factory=EnvironmentModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    opcode: int = 0
    payload_hex: str | None = None  # None draws a random payload per seed
    seeds: tuple[int, ...] = (0,)
    sweep: tuple[str, tuple[float, ...]] | None = None
    table: OpcodeTable = DEFAULT_OPCODES
    parity_present: bool = True
    warmup: bool = False
    window: ReceptionWindow | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.opcode not in self.table:
            raise ValueError(f"opcode {self.opcode:03b} is not in the opcode table")
        if self.sweep is not None:
            resolve_param(self.sweep[0])


@dataclass(frozen=True)
class RunResult:
    seed: int
    frame_bits: int     # everything on the wire, preamble included
    n_bits: int         # bits after the preamble, the ones BER is counted over
    bit_errors: int
    accepted: bool
    duration_s: float   # nominal frame time, one slot per bit
    airtime_s: float    # actual transmit time (the preamble rise is open-ended)
    wall_s: float = 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.n_bits

    @property
    def bph(self) -> float:
        return self.frame_bits / (self.duration_s / 3600.0)


@dataclass(frozen=True)
class ExperimentResult:
    runs: tuple[RunResult, ...]
    param: str | None = None
    value: float | None = None

    @property
    def ber(self) -> float:
        return sum(r.bit_errors for r in self.runs) / sum(r.n_bits for r in self.runs)

    @property
    def median_ber(self) -> float:
        return statistics.median(r.ber for r in self.runs)

    @property
    def frame_success_rate(self) -> float:
        return sum(r.accepted for r in self.runs) / len(self.runs)

    @property
    def bph(self) -> float:
        return sum(r.frame_bits for r in self.runs) / (sum(r.duration_s for r in self.runs) / 3600.0)


@dataclass
class Transmission:
    """Everything produced by one simulated frame transmission."""

    bits: list[int]
    room: TemperatureTrace
    sensed: TemperatureTrace
    smoothed: TemperatureTrace
    frame_start: float
    frame_end: float
    anchor_time: float  # when the preamble turned from rising to falling


# --- parameter lookup -----------------------------------------------------

_SECTIONS = {
    "channel": ChannelParams,
    "environment": EnvironmentModel,
    "sensor": SensorModel,
}


def resolve_param(name: str) -> tuple[str, str]:
    """``"noise_sigma"`` or ``"environment.noise_sigma"`` -> (section, field)."""
    if "." in name:
        section, fname = name.split(".", 1)
        cls = _SECTIONS.get(section)
        if cls is None or fname not in {f.name for f in dataclasses.fields(cls)}:
            raise ValueError(f"unknown parameter {name!r}")
        return section, fname
    hits = [s for s, cls in _SECTIONS.items() if name in {f.name for f in dataclasses.fields(cls)}]
    if not hits:
        raise ValueError(f"unknown parameter {name!r}")
    if len(hits) > 1:
        raise ValueError(f"parameter {name!r} is ambiguous, use one of "
                         + ", ".join(f"{h}.{name}" for h in hits))
    return hits[0], name


def with_param(spec: ExperimentSpec, name: str, value) -> ExperimentSpec:
    section, fname = resolve_param(name)
    obj = getattr(spec, section)
    changes = {fname: value}
    if section == "channel" and fname in ("temp_H", "temp_L"):
        changes["diff_D"] = None
    if section == "channel" and fname == "diff_D":
        # D sweeps move H, keeping L fixed
        changes = {"temp_H": obj.temp_L + value, "diff_D": None}
    if section == "channel" and fname == "sample_rate":
        spec = replace(spec, sensor=replace(spec.sensor, sample_rate=value))
    if section == "sensor" and fname == "sample_rate":
        spec = replace(spec, channel=replace(spec.channel, sample_rate=value))
    return replace(spec, **{section: replace(obj, **changes)})


# --- runs -----------------------------------------------------------------

def frame_bits_for(spec: ExperimentSpec, seed: int) -> list[int]:
    n = spec.table.payload_length(spec.opcode)
    if spec.payload_hex is not None:
        payload = payload_from_hex(spec.payload_hex, n)
    else:
        # payload stream is independent of the sensor-noise stream
        payload = np.random.default_rng([int(seed), 1]).integers(0, 2, n).tolist()
    return build_frame(spec.opcode, payload, spec.parity_present, spec.table)


def transmit(bits: Sequence[int], channel: ChannelParams, environment: EnvironmentModel,
             sensor: SensorModel, warmup: bool = False, lead_in: float = LEAD_IN,
             tail_slots: int = TAIL_SLOTS, t0: float = 0.0) -> Transmission:
    """Simulate the room, sensor and smoothing for one frame.

    The room idles at ambient for ``lead_in`` seconds, then the frame is
    sent, then the transmitter holds L for ``tail_slots`` slots.
    """
    sched = frame_schedule(bits, channel, environment.ascent_rate, warmup)
    if lead_in > 0:
        sched = TargetSchedule([Segment(lead_in, environment.ambient_temp)]) + sched
    if tail_slots > 0:
        sched = sched + TargetSchedule([Segment(tail_slots * channel.slot_T, channel.temp_L)])
    room_rate = max(channel.sample_rate, sensor.sample_rate)
    room = simulate_room(sched, environment, room_rate, t0=t0)
    seg_times = room.meta["segment_times"]
    first = 1 if lead_in > 0 else 0
    if warmup:
        first += 2
    last = len(seg_times) - (2 if tail_slots > 0 else 1)
    sensed = sense(room, sensor, environment)
    smoothed = maf_smooth(sensed, channel.maf_window_w)
    return Transmission(list(bits), room, sensed, smoothed, seg_times[first][0], seg_times[last][1],
                        seg_times[first][1])


def count_bit_errors(tx: Transmission, events, channel: ChannelParams) -> tuple[int, bool]:
    """Bit errors over the bits after the preamble, and whether the frame got through.

    Errors are counted at the physical layer: the receiver's detection whose
    anchor lies within half a slot of the true one is used to decode as many
    slots as were sent, whatever the decoded opcode says. A missed preamble
    scores every bit wrong.
    """
    body = tx.bits[len(PREAMBLE):]
    dets = [(e.candidate, e.detail) for e in events if e.kind is EventKind.PREAMBLE_DETECTED]
    match = [(c, d) for c, d in dets if abs(d.anchor_time - tx.anchor_time) <= channel.slot_T / 2]
    if not match:
        return len(body), False
    cand, det = match[0]
    grid = preamble_grid(tx.smoothed, det, len(body), channel)
    usable = [g for g in grid if g[1] <= len(tx.smoothed)]
    got = decode_bits(tx.smoothed, usable, channel, PREAMBLE[-1]) if usable else []
    errors = sum(a != b for a, b in zip(body, got)) + len(body) - len(got)
    accepted = any(
        e.kind is EventKind.FRAME_ACCEPTED and e.candidate == cand and e.detail.bits() == tx.bits
        for e in events
    )
    return errors, accepted


def run_once(spec: ExperimentSpec, seed: int) -> RunResult:
    tic = time.perf_counter()
    bits = frame_bits_for(spec, seed)
    env = replace(spec.environment, rng_seed=int(seed))
    tx = transmit(bits, spec.channel, env, spec.sensor, spec.warmup)
    events = rx_state_machine(tx.smoothed, spec.channel, spec.table, spec.parity_present,
                              spec.window, env.ascent_rate)
    errors, ok = count_bit_errors(tx, events, spec.channel)
    return RunResult(
        seed=int(seed),
        frame_bits=len(bits),
        n_bits=len(bits) - len(PREAMBLE),
        bit_errors=errors,
        accepted=ok,
        duration_s=len(bits) * spec.channel.slot_T,
        airtime_s=tx.frame_end - tx.frame_start,
        wall_s=time.perf_counter() - tic,
    )


def run_loopback(spec: ExperimentSpec) -> ExperimentResult:
    runs = sorted((run_once(spec, s) for s in spec.seeds), key=lambda r: r.seed)
    return ExperimentResult(tuple(runs))


def run_sweep(spec: ExperimentSpec) -> list[ExperimentResult]:
    if spec.sweep is None:
        raise ValueError("spec has no sweep")
    name, values = spec.sweep
    out = []
    for value in values:
        point = with_param(replace(spec, sweep=None), name, value)
        res = run_loopback(point)
        out.append(ExperimentResult(res.runs, name, value))
    return out


def sweep_rows(results: Sequence[ExperimentResult]) -> list[tuple]:
    rows = []
    for res in results:
        for r in res.runs:
            rows.append((res.param, res.value, r.seed, r.ber, int(r.accepted), r.bph))
    return sorted(rows, key=lambda row: (row[0] or "", row[1] if row[1] is not None else 0, row[2]))


def write_sweep_csv(results: Sequence[ExperimentResult], destination) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for param, value, seed, ber, accepted, bph in sweep_rows(results):
        w.writerow([param, f"{value:g}", seed, f"{ber:.6f}", accepted, f"{bph:.3f}"])
    text = buf.getvalue()
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
    return text
