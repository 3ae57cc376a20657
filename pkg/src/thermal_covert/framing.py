"""Frames, preambles and the receiver state machine.

Frame layout on the wire, most significant bit first everywhere::

    1 0 | o2 o1 o0 | p | payload (n bits, n fixed per opcode)

``p`` is optional even parity over opcode and payload. The "10" preamble is
special on the transmit side: the "1" is held until the room actually
reaches the high target, then the "0" lasts exactly one slot, so the turn
from rising to falling marks the slot clock for everything that follows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import FrameError
from .modem import ChannelParams, decode_bits, encode_bits, slot_grid
from .thermal_env import Segment, TargetSchedule, TemperatureTrace

PREAMBLE = (1, 0)
OPCODE_BITS = 3
TABLE_V_ASCENT = 1.23  # degC/min, used when no environment is given

# preamble shape checks, in units of diff_D and slot_T
RISE_MIN_FRACTION = 0.5
FALL_MIN_FRACTION = 0.25
HALF_FALL_RANGE = (0.25, 0.75)


@dataclass(frozen=True)
class OpcodeTable:
    entries: Mapping[int, tuple[str, int]]

    def __post_init__(self):
        for code, (name, n) in self.entries.items():
            if not 0 <= code < 2**OPCODE_BITS:
                raise ValueError(f"opcode {code} does not fit in {OPCODE_BITS} bits")
            if n < 1:
                raise ValueError(f"opcode {code} ({name}): payload length must be >= 1")

    def __contains__(self, code):
        return code in self.entries

    def payload_length(self, code: int) -> int:
        return self.entries[code][1]

    def name(self, code: int) -> str:
        return self.entries[code][0]

    @classmethod
    def from_config(cls, mapping: Mapping[str, Mapping]) -> "OpcodeTable":
        """``{"000": {"name": ..., "payload_bits": n}, ...}``"""
        entries = {}
        for key, val in mapping.items():
            code = int(key, 2) if len(key) == OPCODE_BITS and set(key) <= {"0", "1"} else int(key)
            entries[code] = (str(val["name"]), int(val["payload_bits"]))
        return cls(entries)

    def to_config(self) -> dict:
        return {
            format(code, "03b"): {"name": name, "payload_bits": n}
            for code, (name, n) in sorted(self.entries.items())
        }


DEFAULT_OPCODES = OpcodeTable({
    0b000: ("ChangeEncryptionKey", 128),
    0b001: ("SelfDestruct", 1),
    0b010: ("SearchAndDelete", 64),
    0b011: ("DisableAsset", 8),
    0b100: ("MoveToStaging", 16),
})


class RejectReason(str, enum.Enum):
    PARITY_FAIL = "PARITY_FAIL"
    UNKNOWN_OPCODE = "UNKNOWN_OPCODE"
    TRUNCATED = "TRUNCATED"
    LENGTH_MISMATCH = "LENGTH_MISMATCH"  # only with parse_frame(exact=True)


class FrameRejected(FrameError):
    def __init__(self, reason: RejectReason, index: int, message: str = ""):
        super().__init__(f"{reason.value} at bit {index}" + (f": {message}" if message else ""))
        self.reason = reason
        self.index = index


def to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - k)) & 1 for k in range(width)]


def from_bits(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def even_parity(bits: Iterable[int]) -> int:
    return sum(int(b) for b in bits) & 1


def payload_from_hex(text: str, n_bits: int) -> list[int]:
    text = text.strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    try:
        value = int(text, 16)
    except ValueError:
        raise ValueError(f"not a hexadecimal payload: {text!r}") from None
    if value >= 2**n_bits:
        raise ValueError(f"payload 0x{text} does not fit in {n_bits} bits")
    return to_bits(value, n_bits)


def bits_to_hex(bits: Sequence[int]) -> str:
    digits = max(1, math.ceil(len(bits) / 4))
    return format(from_bits(bits), f"0{digits}x")


@dataclass(frozen=True)
class Frame:
    opcode: int
    payload: tuple[int, ...]
    parity_present: bool = True
    parity: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(int(b) for b in self.payload))
        expected = even_parity(to_bits(self.opcode, OPCODE_BITS) + list(self.payload))
        if self.parity_present:
            if self.parity is None:
                object.__setattr__(self, "parity", expected)
            elif self.parity != expected:
                raise ValueError("parity bit does not match opcode and payload")
        else:
            object.__setattr__(self, "parity", None)

    def bits(self) -> list[int]:
        out = list(PREAMBLE) + to_bits(self.opcode, OPCODE_BITS)
        if self.parity_present:
            out.append(self.parity)
        return out + list(self.payload)

    def __len__(self):
        return len(PREAMBLE) + OPCODE_BITS + int(self.parity_present) + len(self.payload)

    def hexdump(self, table: OpcodeTable = DEFAULT_OPCODES) -> str:
        name = table.name(self.opcode) if self.opcode in table else "?"
        lines = [
            "preamble: 10",
            f"opcode:   {self.opcode:03b} ({name})",
        ]
        if self.parity_present:
            lines.append(f"parity:   {self.parity} (even)")
        lines.append(f"payload:  {len(self.payload)} bits 0x{bits_to_hex(self.payload)}")
        return "\n".join(lines)


def _opcode_int(opcode) -> int:
    if isinstance(opcode, str):
        return int(opcode, 2)
    if isinstance(opcode, (list, tuple)):
        return from_bits(opcode)
    return int(opcode)


def build_frame(opcode, payload: Sequence[int], parity_present: bool = True,
                table: OpcodeTable = DEFAULT_OPCODES) -> list[int]:
    code = _opcode_int(opcode)
    if code not in table:
        raise FrameError(f"opcode {code:03b} is not in the opcode table")
    n = table.payload_length(code)
    if len(payload) != n:
        raise FrameError(f"opcode {code:03b} takes {n} payload bits, got {len(payload)}")
    return Frame(code, tuple(payload), parity_present).bits()


def frame_length(opcode: int, table: OpcodeTable = DEFAULT_OPCODES, parity_present: bool = True) -> int:
    return len(PREAMBLE) + OPCODE_BITS + int(parity_present) + table.payload_length(opcode)


def parse_frame(bits: Sequence[int], table: OpcodeTable = DEFAULT_OPCODES,
                parity_present: bool = True, *, preamble: bool = False, exact: bool = False) -> Frame:
    """Split a bit stream into a frame, or raise :class:`FrameRejected`.

    ``bits`` starts at the opcode unless ``preamble`` is set, in which case
    the leading "10" is checked and skipped. Trailing bits are ignored
    unless ``exact`` is set: when the stream is known to hold exactly one
    frame, surplus bits mean the opcode was misread as a shorter one, which
    a single parity bit catches only half the time.
    """
    bits = [int(b) for b in bits]
    offset = 0
    if preamble:
        if len(bits) < 2:
            raise FrameRejected(RejectReason.TRUNCATED, len(bits), "no preamble")
        if tuple(bits[:2]) != PREAMBLE:
            raise FrameError(f"stream starts with {bits[:2]}, not the 10 preamble")
        bits = bits[2:]
        offset = 2
    header = OPCODE_BITS + int(parity_present)
    if len(bits) < header:
        raise FrameRejected(RejectReason.TRUNCATED, offset + len(bits), "header incomplete")
    code = from_bits(bits[:OPCODE_BITS])
    if code not in table:
        raise FrameRejected(RejectReason.UNKNOWN_OPCODE, offset, f"opcode {code:03b}")
    n = table.payload_length(code)
    if len(bits) < header + n:
        raise FrameRejected(RejectReason.TRUNCATED, offset + len(bits),
                            f"payload needs {n} bits, got {len(bits) - header}")
    if exact and len(bits) > header + n:
        raise FrameRejected(RejectReason.LENGTH_MISMATCH, offset + header + n,
                            f"opcode {code:03b} frame ends {len(bits) - header - n} bits early")
    payload = tuple(bits[header:header + n])
    parity = bits[OPCODE_BITS] if parity_present else None
    if parity_present and parity != even_parity(bits[:OPCODE_BITS] + list(payload)):
        raise FrameRejected(RejectReason.PARITY_FAIL, offset + OPCODE_BITS)
    return Frame(code, payload, parity_present, parity)


# --- transmit side --------------------------------------------------------

def default_rise_timeout(params: ChannelParams, ascent_rate: float = TABLE_V_ASCENT) -> float:
    """Three times the nominal H-L rise time, in seconds."""
    if params.rise_timeout is not None:
        return params.rise_timeout
    return 3.0 * params.diff_D / ascent_rate * 60.0


def preamble_schedule(params: ChannelParams, ascent_rate: float = TABLE_V_ASCENT) -> TargetSchedule:
    return TargetSchedule([
        Segment(default_rise_timeout(params, ascent_rate), params.temp_H, until_reached=True),
        Segment(params.slot_T, params.temp_L),
    ])


def warmup_schedule(params: ChannelParams, ascent_rate: float = TABLE_V_ASCENT) -> TargetSchedule:
    """A short heat/cool cycle before the preamble.

    The heating leg stops at 40% of D so the cycle cannot pass for a
    preamble; the cooling leg runs back to L.
    """
    timeout = default_rise_timeout(params, ascent_rate)
    return TargetSchedule([
        Segment(timeout, params.temp_L + 0.4 * params.diff_D, until_reached=True),
        Segment(timeout, params.temp_L, until_reached=True),
    ])


def frame_schedule(bits: Sequence[int], params: ChannelParams, ascent_rate: float = TABLE_V_ASCENT,
                   warmup: bool = False) -> TargetSchedule:
    """Full transmit schedule for a serialized frame (preamble included)."""
    if tuple(bits[:2]) != PREAMBLE:
        raise FrameError("frame must start with the 10 preamble")
    sched = preamble_schedule(params, ascent_rate)
    if len(bits) > 2:
        sched = sched + encode_bits(bits[2:], params)
    if warmup:
        sched = warmup_schedule(params, ascent_rate) + sched
    return sched


# --- receive side ---------------------------------------------------------

@dataclass(frozen=True)
class PreambleDetection:
    index: int             # smoothed-trace index of the detected peak
    anchor_time: float     # estimated instant the room turned from rising to falling
    rise: float
    fall: float


def _window(smoothed: TemperatureTrace, params: ChannelParams) -> int:
    return int(smoothed.meta.get("maf_window", params.maf_window_w))


def _fit_line(y: np.ndarray, x: np.ndarray) -> tuple[float, float] | None:
    if x.size < 4:
        return None
    slope, icept = np.polyfit(x, y, 1)
    return slope, icept


def _refine_anchor(s: np.ndarray, p: int, half_w: int, span: int) -> float:
    """Intersect straight-line fits to the rising and falling flanks around ``p``."""
    lo = max(0, p - half_w - span)
    hi = min(s.size, p + half_w + span + 1)
    xr = np.arange(lo, max(lo, p - half_w))
    xf = np.arange(min(hi, p + half_w + 1), hi)
    rise = _fit_line(s[xr], xr) if xr.size else None
    fall = _fit_line(s[xf], xf) if xf.size else None
    if rise is None or fall is None:
        return float(p)
    (a1, b1), (a2, b2) = rise, fall
    if not (a1 > 0 > a2):
        return float(p)
    x = (b2 - b1) / (a1 - a2)
    if abs(x - p) > span:
        return float(p)
    return float(x)


def detect_preamble(
    smoothed: TemperatureTrace,
    params: ChannelParams,
    start: int = 0,
    ascent_rate: float = TABLE_V_ASCENT,
) -> PreambleDetection | None:
    """First preamble whose peak lies at or after ``start``.

    A candidate is a local maximum (over one slot) of the smoothed trace
    that rose by at least D/2 over the rise timeout, falls by at least D/4
    over the following slot, and falls roughly linearly through that slot
    (the first half carries 25-75% of the drop). Peaks that need samples
    beyond the end of the trace are not considered yet.
    """
    s = smoothed.samples
    n = s.size
    fs = smoothed.sample_rate
    nt = params.slot_samples
    half_w = _window(smoothed, params) // 2
    lookback = int(round(default_rise_timeout(params, ascent_rate) * fs))
    last = n - nt - 1
    start = max(int(start), 0)
    if last < start:
        return None

    rollmax = maximum_filter1d(s, size=nt + 1, mode="nearest")
    # trailing minimum over [i - lookback, i]
    trail_min = minimum_filter1d(s, size=lookback + 1, origin=lookback // 2, mode="nearest")
    # running maximum over [i, i + nt]
    ahead_max = maximum_filter1d(s, size=nt + 1, origin=-((nt + 1) // 2), mode="nearest")

    is_peak = np.zeros(n, dtype=bool)
    is_peak[start:last + 1] = s[start:last + 1] >= rollmax[start:last + 1]
    idx = np.flatnonzero(is_peak)
    if idx.size == 0:
        return None
    # plateaus of equal maxima collapse to their midpoint
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    d = params.diff_D
    for run in runs:
        p = int(run[(run.size - 1) // 2])
        rise = s[p] - trail_min[p]
        if rise < RISE_MIN_FRACTION * d:
            continue
        fall = s[p] - s[p + nt]
        if fall < FALL_MIN_FRACTION * d:
            continue
        if ahead_max[p] > s[p]:
            continue
        half = (s[p] - s[p + nt // 2]) / fall
        if not HALF_FALL_RANGE[0] <= half <= HALF_FALL_RANGE[1]:
            continue
        x = _refine_anchor(s, p, half_w, nt // 3)
        anchor_time = smoothed.t0 + (x - half_w) / fs
        return PreambleDetection(p, anchor_time, float(rise), float(fall))
    return None


def preamble_grid(smoothed: TemperatureTrace, det: PreambleDetection, n_slots: int,
                  params: ChannelParams) -> list[tuple[int, int]]:
    """Slot grid for the bits after the preamble: the fall is the '0', so data starts one slot later."""
    return slot_grid(smoothed, det.anchor_time + params.slot_T, n_slots, params)


class EventKind(str, enum.Enum):
    PREAMBLE_DETECTED = "PREAMBLE_DETECTED"
    BIT = "BIT"
    FRAME_ACCEPTED = "FRAME_ACCEPTED"
    FRAME_REJECTED = "FRAME_REJECTED"


@dataclass(frozen=True)
class RxEvent:
    kind: EventKind
    position: int
    detail: object = None
    candidate: int = 0  # which detected preamble this event belongs to

    def describe(self, table: OpcodeTable = DEFAULT_OPCODES) -> str:
        if self.kind is EventKind.FRAME_ACCEPTED:
            return f"{self.position:>8d} FRAME_ACCEPTED opcode={self.detail.opcode:03b} " \
                   f"payload=0x{bits_to_hex(self.detail.payload)}"
        if self.kind is EventKind.FRAME_REJECTED:
            return f"{self.position:>8d} FRAME_REJECTED {self.detail.reason.value}"
        if self.kind is EventKind.PREAMBLE_DETECTED:
            return f"{self.position:>8d} PREAMBLE_DETECTED t={self.detail.anchor_time:.1f}s"
        return f"{self.position:>8d} BIT {self.detail}"


@dataclass(frozen=True)
class Rejection:
    reason: RejectReason
    bits: tuple[int, ...]
    message: str = ""


class RxState(str, enum.Enum):
    IDLE = "IDLE"
    PREAMBLE_SEARCH = "PREAMBLE_SEARCH"
    HEADER = "HEADER"
    PAYLOAD = "PAYLOAD"
    VERIFY = "VERIFY"


@dataclass
class ReceptionWindow:
    """Listen only for preambles whose anchor falls in [start, start + duration) time-of-day."""

    start: float  # seconds after midnight
    duration: float

    def contains(self, t: float) -> bool:
        return (t - self.start) % 86400.0 < self.duration


class Receiver:
    """Single-owner receiver over a growing smoothed trace.

    ``feed`` appends smoothed samples and advances as far as the data
    allows; ``finish`` flushes a frame cut off by the end of the data.
    After a rejected frame the search restarts one slot past the failed
    preamble, so a real preamble hidden inside a false frame is still found.
    """

    def __init__(self, params: ChannelParams, table: OpcodeTable = DEFAULT_OPCODES,
                 parity_present: bool = True, window: ReceptionWindow | None = None,
                 ascent_rate: float = TABLE_V_ASCENT):
        self.params = params
        self.table = table
        self.parity_present = parity_present
        self.window = window
        self.ascent_rate = ascent_rate
        self.state = RxState.IDLE
        self.events: list[RxEvent] = []
        self.frames: list[Frame] = []
        self._trace: TemperatureTrace | None = None
        self._cursor = 0
        self._det: PreambleDetection | None = None
        self._bits: list[int] = []
        self._candidates = 0
        self._grid_cache: list[tuple[int, int]] = []

    @property
    def trace(self) -> TemperatureTrace | None:
        return self._trace

    def feed(self, chunk: TemperatureTrace) -> list[RxEvent]:
        if self._trace is None:
            self._trace = chunk
        else:
            expected_t0 = self._trace.t0 + len(self._trace) / self._trace.sample_rate
            if not math.isclose(chunk.t0, expected_t0, abs_tol=0.5 / chunk.sample_rate):
                raise ValueError("chunk does not continue the trace")
            merged = np.concatenate([self._trace.samples, chunk.samples])
            self._trace = self._trace.with_samples(merged)
        if self.state is RxState.IDLE:
            self.state = RxState.PREAMBLE_SEARCH
        before = len(self.events)
        self._advance(final=False)
        return self.events[before:]

    def finish(self) -> list[RxEvent]:
        before = len(self.events)
        if self._trace is not None:
            self._advance(final=True)
        self.state = RxState.IDLE
        return self.events[before:]

    # -- internals --

    def _emit(self, kind, position, detail=None):
        self.events.append(RxEvent(kind, int(position), detail, self._candidates))

    def _grid(self, n_slots):
        return preamble_grid(self._trace, self._det, n_slots, self.params)

    def _decode(self, n_slots):
        grid = self._grid(n_slots)
        if grid[-1][1] > len(self._trace):
            return None, grid
        return decode_bits(self._trace, grid, self.params, initial_prev_bit=PREAMBLE[-1]), grid

    def _reject(self, reason, grid, message=""):
        bits = tuple(self._bits)
        for (a, _), b in zip(grid, bits):
            self._emit(EventKind.BIT, a, b)
        self._emit(EventKind.FRAME_REJECTED, self._det.index, Rejection(reason, bits, message))
        self._cursor = self._det.index + self.params.slot_samples
        self.state = RxState.PREAMBLE_SEARCH

    def _advance(self, final: bool) -> None:
        header = OPCODE_BITS + int(self.parity_present)
        while True:
            if self.state is RxState.PREAMBLE_SEARCH:
                det = detect_preamble(self._trace, self.params, self._cursor, self.ascent_rate)
                if det is None:
                    return
                if self.window is not None and not self.window.contains(det.anchor_time):
                    self._cursor = det.index + 1
                    continue
                self._det = det
                self._candidates += 1
                self._emit(EventKind.PREAMBLE_DETECTED, det.index, det)
                self.state = RxState.HEADER

            if self.state is RxState.HEADER:
                bits, grid = self._decode(header)
                if bits is None:
                    if not final:
                        return
                    # the data ended inside the header: not a frame at all
                    self._cursor = self._det.index + self.params.slot_samples
                    self.state = RxState.PREAMBLE_SEARCH
                    continue
                self._bits = bits
                code = from_bits(bits[:OPCODE_BITS])
                if code not in self.table:
                    self._reject(RejectReason.UNKNOWN_OPCODE, grid, f"opcode {code:03b}")
                    continue
                self.state = RxState.PAYLOAD

            if self.state is RxState.PAYLOAD:
                code = from_bits(self._bits[:OPCODE_BITS])
                total = header + self.table.payload_length(code)
                bits, grid = self._decode(total)
                if bits is None:
                    if not final:
                        return
                    usable = [g for g in grid if g[1] <= len(self._trace)]
                    if usable:
                        self._bits = decode_bits(self._trace, usable, self.params, PREAMBLE[-1])
                    self._reject(RejectReason.TRUNCATED, usable or grid[:0])
                    continue
                self._bits = bits
                self._grid_cache = grid
                self.state = RxState.VERIFY

            if self.state is RxState.VERIFY:
                grid = self._grid_cache
                try:
                    frame = parse_frame(self._bits, self.table, self.parity_present)
                except FrameRejected as exc:
                    self._reject(exc.reason, grid)
                    continue
                for (a, _), b in zip(grid, self._bits):
                    self._emit(EventKind.BIT, a, b)
                end = grid[-1][1]
                self._emit(EventKind.FRAME_ACCEPTED, end, frame)
                self.frames.append(frame)
                # the next preamble's peak comes after at least a short rise
                self._cursor = end + self.params.slot_samples // 4
                self.state = RxState.PREAMBLE_SEARCH


def rx_state_machine(smoothed: TemperatureTrace, params: ChannelParams,
                     table: OpcodeTable = DEFAULT_OPCODES, parity_present: bool = True,
                     window: ReceptionWindow | None = None,
                     ascent_rate: float = TABLE_V_ASCENT) -> list[RxEvent]:
    """Run the receiver over a complete smoothed trace; events sorted by position."""
    rx = Receiver(params, table, parity_present, window, ascent_rate)
    rx.feed(smoothed)
    rx.finish()
    return sorted(rx.events, key=lambda e: e.position)


def majority_vote(frames: Sequence[Sequence[int]], expected_length: int | None = None,
                  parity_valid: Sequence[bool] | None = None) -> list[int]:
    """Per-position majority over copies of one frame from several receivers.

    Ties go to the first copy that passed its parity check, else to 0.
    """
    if len(frames) < 2:
        raise ValueError("majority vote needs at least two copies")
    arr = np.asarray([[int(b) for b in f] for f in frames]) if all(
        len(f) == len(frames[0]) for f in frames) else None
    if arr is None:
        raise ValueError("copies differ in length")
    if expected_length is not None and arr.shape[1] != expected_length:
        raise ValueError(f"copies are {arr.shape[1]} bits, expected {expected_length}")
    if parity_valid is not None and len(parity_valid) != len(frames):
        raise ValueError("parity_valid must have one flag per copy")
    ones = arr.sum(axis=0)
    zeros = arr.shape[0] - ones
    out = (ones > zeros).astype(int)
    ties = ones == zeros
    if ties.any():
        good = [k for k, ok in enumerate(parity_valid or []) if ok]
        out[ties] = arr[good[0], ties] if good else 0
    return out.tolist()
