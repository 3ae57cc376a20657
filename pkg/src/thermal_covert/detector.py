"""Countermeasure: flag rooms whose temperature keeps rising and falling in lockstep.

A transmitting air conditioner leaves a recognisable mark on any thermometer
in the room: repeated ramps up and down whose direction only changes on a
fixed clock. The detector looks for that in sliding windows:

1. smooth the trace (window ``4 * period_band.min``) and subtract a slow
   baseline (window ``4 * period_band.max``);
2. autocorrelate the slope of the smoothed trace over the lags in
   ``period_band``. Slopes held for a whole slot keep the correlation high
   across short lags, while sensor flicker decorrelates immediately;
3. alarm where the peak correlation, the swing amplitude and the number of
   rise/fall cycles inside the quiet window all clear their thresholds.

The period reported with an alarm is the symbol clock, not an oscillation
period: the air conditioner only changes direction on slot boundaries, so
the curvature of the trace is a train of pulses on a fixed grid and its
spectrum has a line at ``1 / slot``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import TraceError
from .thermal_env import TemperatureTrace

DAY = 86400.0
MULTI_PERIOD_TOLERANCE = 0.10
# prefer the fundamental when half the strongest clock frequency is nearly as strong
SUBHARMONIC_RATIO = 0.5


@dataclass(frozen=True)
class DetectorConfig:
    quiet_window: tuple[float, float] = (0.0, DAY)  # seconds after midnight, may wrap
    min_cycles: int = 4
    period_band: tuple[float, float] = (30.0, 600.0)
    amplitude_floor: float = 0.5
    alarm_threshold: float = 0.6

    def __post_init__(self):
        if self.min_cycles < 2:
            raise ValueError("min_cycles must be >= 2")
        lo, hi = self.period_band
        if not 0 < lo < hi:
            raise ValueError("period_band must satisfy 0 < min < max")
        if not self.amplitude_floor > 0:
            raise ValueError("amplitude_floor must be positive")
        if not 0 <= self.alarm_threshold <= 1:
            raise ValueError("alarm_threshold must be in [0, 1]")
        qs, qe = self.quiet_window
        if not (0 <= qs <= DAY and 0 <= qe <= DAY):
            raise ValueError("quiet_window bounds must be within one day")

    def in_quiet(self, t: np.ndarray) -> np.ndarray:
        qs, qe = self.quiet_window
        if qe - qs >= DAY:
            return np.ones_like(t, dtype=bool)
        tod = np.mod(t, DAY)
        if qs <= qe:
            return (tod >= qs) & (tod < qe)
        return (tod >= qs) | (tod < qe)

    @property
    def min_span(self) -> float:
        return self.min_cycles * self.period_band[1]


@dataclass(frozen=True)
class Alarm:
    trace_id: str
    onset_index: int
    period_s: float
    amplitude_c: float
    score: float
    cycles: int = 0
    end_index: int = 0
    boosted: bool = False
    rooms: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["score"] = round(self.score, 6)
        d["amplitude_c"] = round(self.amplitude_c, 6)
        d["period_s"] = round(self.period_s, 3)
        return d


def _autocorr(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    n = x.size
    spec = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(spec * np.conj(spec))[:n]
    if acf[0] <= 1e-12 * n:
        return np.zeros(n)
    return acf / acf[0]


def swing_peaks(d: np.ndarray, hysteresis: float) -> np.ndarray:
    """Indices of maxima that are followed by a drop of at least ``hysteresis``
    and preceded by a rise of at least as much (or the start of the data)."""
    peaks = []
    rising = True
    extreme, ext_idx = d[0], 0
    for i, v in enumerate(d):
        if rising:
            if v > extreme:
                extreme, ext_idx = v, i
            elif extreme - v >= hysteresis:
                peaks.append(ext_idx)
                rising, extreme, ext_idx = False, v, i
        else:
            if v < extreme:
                extreme, ext_idx = v, i
            elif v - extreme >= hysteresis:
                rising, extreme, ext_idx = True, v, i
    # a leading descent is not a swing
    if peaks and peaks[0] == 0:
        peaks = peaks[1:]
    return np.asarray(peaks, dtype=int)


@dataclass
class _Window:
    start: int
    end: int
    score: float
    amplitude: float
    cycles: int

    def confidence(self, cfg: DetectorConfig) -> float:
        # at the amplitude floor this is the raw correlation; larger swings
        # are stronger evidence and pull it towards 1
        if self.score <= 0 or self.amplitude <= 0:
            return 0.0
        return float(self.score ** (cfg.amplitude_floor / max(self.amplitude, cfg.amplitude_floor)))

    def flagged(self, cfg: DetectorConfig) -> bool:
        return (self.score >= cfg.alarm_threshold and self.amplitude >= cfg.amplitude_floor
                and self.cycles >= cfg.min_cycles)


def _analyse(trace: TemperatureTrace, cfg: DetectorConfig):
    fs = trace.sample_rate
    x = trace.samples
    lo, hi = cfg.period_band
    smooth = uniform_filter1d(x, max(1, int(round(4 * lo * fs))), mode="nearest")
    base = uniform_filter1d(x, max(1, int(round(4 * hi * fs))), mode="nearest")
    detrended = smooth - base
    slope = np.diff(smooth, prepend=smooth[0])
    return detrended, slope


def estimate_period(x: np.ndarray, fs: float, band: tuple[float, float]) -> float:
    """Symbol clock of ``x`` in seconds, searched within ``band``.

    Twice smoothing over ``2 * band.min`` keeps kink positions unbiased; the
    magnitude of the second difference then peaks on every direction change.
    """
    lo, hi = band
    k = max(1, int(round(2 * lo * fs)))
    s = uniform_filter1d(uniform_filter1d(x, k, mode="nearest"), k, mode="nearest")
    r = np.abs(np.diff(s, 2))
    r = r - r.mean()
    n = r.size
    if n < 4 or not np.any(r):
        return float("nan")
    power = np.abs(np.fft.rfft(r, 4 * n)) ** 2
    freqs = np.fft.rfftfreq(4 * n, 1.0 / fs)
    in_band = (freqs >= 1.0 / hi) & (freqs <= 1.0 / lo)
    if not in_band.any():
        return float("nan")
    f_band, p_band = freqs[in_band], power[in_band]
    f = f_band[np.argmax(p_band)]
    half = f / 2
    if half >= 1.0 / hi and np.interp(half, f_band, p_band) >= SUBHARMONIC_RATIO * p_band.max():
        f = half
    return float(1.0 / f)


def _window_stats(detrended, slope, quiet_peaks, a, b, cfg: DetectorConfig, fs: float) -> _Window:
    lo, hi = cfg.period_band
    lag_lo, lag_hi = int(round(lo * fs)), int(round(hi * fs))
    acf = _autocorr(slope[a:b])
    band = acf[lag_lo:lag_hi + 1]
    score = float(max(0.0, band.max())) if band.size else 0.0

    seg = detrended[a:b]
    amplitude = float((np.percentile(seg, 95) - np.percentile(seg, 5)) / 2)
    cycles = int(np.count_nonzero((quiet_peaks >= a) & (quiet_peaks < b)))
    return _Window(a, b, score, amplitude, cycles)


def scan_trace(trace: TemperatureTrace, cfg: DetectorConfig = DetectorConfig(),
               trace_id: str = "trace") -> list[Alarm]:
    """Alarms for one room's trace, in time order."""
    fs = trace.sample_rate
    span = int(round(cfg.min_span * fs))
    if len(trace) < span:
        raise TraceError(
            f"trace of {trace.duration:.0f} s is too short; the detector needs at least "
            f"{cfg.min_span:.0f} s ({span} samples)"
        )
    detrended, slope = _analyse(trace, cfg)
    peaks = swing_peaks(detrended, cfg.amplitude_floor / 2)
    quiet_peaks = peaks[cfg.in_quiet(trace.times[peaks])] if peaks.size else peaks
    hop = max(1, span // 4)
    starts = list(range(0, len(trace) - span + 1, hop))
    if starts[-1] != len(trace) - span:
        starts.append(len(trace) - span)
    windows = [_window_stats(detrended, slope, quiet_peaks, a, a + span, cfg, fs) for a in starts]

    # flagged windows that overlap belong to one alarm, even across a dropout
    alarms: list[Alarm] = []
    run: list[_Window] = []
    for w in windows:
        if not w.flagged(cfg):
            continue
        if run and w.start >= run[-1].end:
            alarms.append(_merge(run, trace, detrended, cfg, trace_id, span - hop))
            run = []
        run.append(w)
    if run:
        alarms.append(_merge(run, trace, detrended, cfg, trace_id, span - hop))
    return alarms


def _merge(run: list[_Window], trace: TemperatureTrace, detrended: np.ndarray, cfg: DetectorConfig,
           trace_id: str, lookback: int) -> Alarm:
    best = max(run, key=lambda w: w.confidence(cfg))
    a, b = run[0].start, run[-1].end
    # the activity may begin in any earlier window overlapping the first flagged one
    early = max(0, a - lookback)
    loud = np.flatnonzero(np.abs(detrended[early:b]) >= cfg.amplitude_floor)
    onset = early + int(loud[0]) if loud.size else a
    return Alarm(
        trace_id=trace_id,
        onset_index=onset,
        period_s=estimate_period(trace.samples[a:b], trace.sample_rate, cfg.period_band),
        amplitude_c=max(w.amplitude for w in run),
        score=best.confidence(cfg),
        cycles=max(w.cycles for w in run),
        end_index=b,
    )


def scan_multi(traces: Sequence[TemperatureTrace], cfg: DetectorConfig = DetectorConfig(),
               trace_ids: Sequence[str] | None = None) -> list[Alarm]:
    """Scan several rooms and boost alarms that agree on period across rooms.

    An alarm that overlaps in time with alarms in ``k - 1`` other rooms whose
    periods are within 10% gets score ``1 - (1 - score) ** k``. Output is
    sorted by score, highest first.
    """
    if len(traces) < 2:
        raise ValueError("scan_multi needs at least two traces")
    ids = list(trace_ids) if trace_ids is not None else [f"room{k}" for k in range(len(traces))]
    spans = [(t.t0, t.t0 + t.duration) for t in traces]
    if max(s for s, _ in spans) >= min(e for _, e in spans):
        raise ValueError("traces do not share a common time span")

    per_room = [scan_trace(t, cfg, tid) for t, tid in zip(traces, ids)]

    def interval(alarm: Alarm, trace: TemperatureTrace):
        return trace.t0 + alarm.onset_index / trace.sample_rate, trace.t0 + alarm.end_index / trace.sample_rate

    out = []
    for r, alarms in enumerate(per_room):
        for alarm in alarms:
            s0, e0 = interval(alarm, traces[r])
            agreeing = 1
            for q, others in enumerate(per_room):
                if q == r:
                    continue
                for other in others:
                    s1, e1 = interval(other, traces[q])
                    same_time = s1 < e0 and s0 < e1
                    same_period = abs(other.period_s - alarm.period_s) <= MULTI_PERIOD_TOLERANCE * alarm.period_s
                    if same_time and same_period:
                        agreeing += 1
                        break
            if agreeing > 1:
                alarm = replace(alarm, score=1 - (1 - alarm.score) ** agreeing, boosted=True, rooms=agreeing)
            out.append(alarm)
    return sorted(out, key=lambda a: (-a.score, a.trace_id, a.onset_index))
