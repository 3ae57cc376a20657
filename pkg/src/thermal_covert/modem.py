"""Line coding for the thermal channel.

Transmit: each bit becomes one slot-long target temperature, high for 1 and
low for 0. Receive: floor-quantized sensor samples go through a moving
average, each slot is classified as rising, flat or falling, and the trend is
read against the previously decoded bit:

    previous bit   rising  flat  falling
         0           1      0      0
         1           1      1      0

No absolute temperature is ever compared, only changes within a slot.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DecodeError, ScheduleError, TraceError
from .thermal_env import SMOOTHED, Segment, TargetSchedule, TemperatureTrace

# Extra samples trimmed off the end of each slot before classification.
# Smoothed samples are stamped at the end of their averaging window, so a
# slot's samples never see the next slot; the guard also absorbs a few
# samples of preamble anchor error. Calibrated on the simulated channel.
SLOT_GUARD_FRACTION = 0.05


class ChannelWarning(UserWarning):
    pass


class Trend(enum.Enum):
    UP = "UP"
    FLAT = "FLAT"
    DOWN = "DOWN"


# (previous bit, trend) -> decoded bit
DECODE_TABLE = {
    (0, Trend.UP): 1,
    (0, Trend.FLAT): 0,
    (0, Trend.DOWN): 0,
    (1, Trend.UP): 1,
    (1, Trend.FLAT): 1,
    (1, Trend.DOWN): 0,
}


@dataclass(frozen=True)
class ChannelParams:
    slot_T: float = 90.0
    temp_H: float = 26.0
    temp_L: float = 23.0
    diff_D: float | None = None
    observable_O: float | None = None
    gamma: float = 1.0
    mu: float = 0.01
    maf_window_w: int = 198
    sample_rate: float = 3.3
    rise_timeout: float | None = None

    def __post_init__(self):
        if not self.temp_H > self.temp_L:
            raise ValueError(f"temp_H ({self.temp_H}) must exceed temp_L ({self.temp_L})")
        d = abs(self.temp_H - self.temp_L)
        if self.diff_D is None:
            object.__setattr__(self, "diff_D", d)
        elif not math.isclose(self.diff_D, d, abs_tol=1e-9):
            raise ValueError(f"diff_D={self.diff_D} but |H - L| = {d}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.slot_T > 0:
            raise ValueError("slot_T must be positive")
        if int(self.maf_window_w) != self.maf_window_w or self.maf_window_w < 1:
            raise ValueError("maf_window_w must be an integer >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.rise_timeout is not None and not self.rise_timeout > 0:
            raise ValueError("rise_timeout must be positive")
        if self.observable_O is not None and self.diff_D >= self.observable_O:
            warnings.warn(
                f"D={self.diff_D} degC is not below the observability bound O={self.observable_O} degC; "
                "the schedule may be noticed",
                ChannelWarning,
                stacklevel=3,
            )

    @property
    def slot_samples(self) -> int:
        return int(round(self.slot_T * self.sample_rate))

    @property
    def bit_rate_bph(self) -> float:
        return 3600.0 / self.slot_T


def bit_rate_bph(params: ChannelParams) -> float:
    return params.bit_rate_bph


def _check_bits(bits: Sequence[int]) -> list[int]:
    out = [int(b) for b in bits]
    if any(b not in (0, 1) for b in out):
        raise ValueError("bits must be 0 or 1")
    return out


def encode_bits(bits: Sequence[int], params: ChannelParams) -> TargetSchedule:
    bits = _check_bits(bits)
    if not bits:
        raise ScheduleError("cannot encode an empty bit stream")
    return TargetSchedule(
        Segment(params.slot_T, params.temp_H if b else params.temp_L) for b in bits
    )


def maf_smooth(trace: TemperatureTrace, w: int) -> TemperatureTrace:
    """Moving average over ``w + 1`` samples, one output per full window.

    ``S[i] = mean(T[i .. i + w])`` (inclusive), so the output is ``w`` samples
    shorter than the input. Each output sample is timestamped at the last
    input sample of its window.
    """
    w = int(w)
    x = trace.samples
    n = x.size
    if w < 0:
        raise ValueError("window must be >= 0")
    if n <= w:
        raise TraceError(f"trace of {n} samples is too short for a window of {w}")
    # subtracting the first sample keeps constant input exactly constant
    base = x[0]
    cs = np.concatenate(([0.0], np.cumsum(x - base)))
    s = (cs[w + 1:] - cs[: n - w]) / (w + 1) + base
    out = TemperatureTrace(
        trace.sample_rate, trace.t0 + w / trace.sample_rate, s, SMOOTHED, trace.gamma, dict(trace.meta)
    )
    out.meta["maf_window"] = w
    return out


def classify_trend(smoothed: TemperatureTrace | np.ndarray, slot_bounds: tuple[int, int], mu: float) -> Trend:
    """Compare the mean of the slot's first quarter with its last quarter."""
    samples = smoothed.samples if isinstance(smoothed, TemperatureTrace) else np.asarray(smoothed)
    start, end = slot_bounds
    if start < 0 or end > samples.size:
        raise DecodeError(f"slot [{start}, {end}) outside trace of {samples.size} samples", start)
    if end - start < 8:
        raise DecodeError(f"slot [{start}, {end}) has fewer than 8 samples", start)
    q = (end - start) // 4
    seg = samples[start:end]
    delta = seg[-q:].mean() - seg[:q].mean()
    if delta > mu:
        return Trend.UP
    if delta < -mu:
        return Trend.DOWN
    return Trend.FLAT


def decode_trends(trends: Sequence[Trend], initial_prev_bit: int) -> list[int]:
    prev = int(initial_prev_bit)
    bits = []
    for trend in trends:
        prev = DECODE_TABLE[(prev, trend)]
        bits.append(prev)
    return bits


def decode_bits(
    smoothed: TemperatureTrace,
    slot_grid: Sequence[tuple[int, int]],
    params: ChannelParams,
    initial_prev_bit: int = 0,
) -> list[int]:
    trends = [classify_trend(smoothed, bounds, params.mu) for bounds in slot_grid]
    return decode_trends(trends, initial_prev_bit)


def slot_grid(
    smoothed: TemperatureTrace,
    first_slot_time: float,
    n_slots: int,
    params: ChannelParams,
    guard_fraction: float = SLOT_GUARD_FRACTION,
) -> list[tuple[int, int]]:
    """Index bounds in ``smoothed`` of consecutive slots starting at ``first_slot_time``.

    Because each smoothed sample is stamped at the end of its window, the
    samples falling inside a slot's time span average only that slot (and
    the one before). The grid is pulled back by a small guard so residual
    anchor error does not leak the next slot in.
    """
    fs = smoothed.sample_rate
    guard = int(round(guard_fraction * params.slot_T * fs))
    start0 = (first_slot_time - smoothed.t0) * fs
    grid = []
    for k in range(n_slots):
        a = int(round(start0 + k * params.slot_T * fs)) - guard
        b = int(round(start0 + (k + 1) * params.slot_T * fs)) - guard
        grid.append((a, b))
    return grid
