"""Seeded synthetic traces used by the test suites and ``paper-repro``."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .framing import DEFAULT_OPCODES, build_frame
from .harness import Transmission, transmit
from .modem import ChannelParams, maf_smooth
from .thermal_env import (
    EnvironmentModel, ROOM_TRUE, SENSOR_QUANTIZED, SensorModel, TemperatureTrace, quantize, sense,
)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def random_payload(seed: int, n_bits: int) -> list[int]:
    return _rng(seed, 2).integers(0, 2, n_bits).tolist()


def random_frame(seed: int, opcode: int = 0) -> list[int]:
    n = DEFAULT_OPCODES.payload_length(opcode)
    return build_frame(opcode, random_payload(seed, n))


def quiet_trace(seed: int, hours: float = 4.0, sensor: SensorModel = SensorModel(),
                max_sigma: float = 0.3, sensor_offset: float = 4.0, t0: float = 0.0) -> TemperatureTrace:
    """A room held at a constant temperature, read by a noisy floor-quantizing sensor."""
    rng = _rng(seed, 3)
    n = int(hours * 3600 * sensor.sample_rate)
    level = rng.uniform(20.0, 26.0)
    sigma = rng.uniform(0.0, max_sigma)
    values = level + sensor_offset + rng.normal(0.0, sigma, n)
    return TemperatureTrace(sensor.sample_rate, t0, quantize(values, sensor.resolution_gamma),
                            SENSOR_QUANTIZED, sensor.resolution_gamma)


def random_walk_trace(seed: int, hours: float = 4.0, sensor: SensorModel = SensorModel(),
                      step_sigma: float = 0.005, t0: float = 0.0) -> TemperatureTrace:
    """Sensor readings of a room drifting as a Gaussian random walk, one step per sample."""
    rng = _rng(seed, 4)
    n = int(hours * 3600 * sensor.sample_rate)
    room = 22.0 + np.cumsum(rng.normal(0.0, step_sigma, n))
    return TemperatureTrace(sensor.sample_rate, t0, quantize(room + 4.0, sensor.resolution_gamma),
                            SENSOR_QUANTIZED, sensor.resolution_gamma)


def transmission_trace(seed: int, channel: ChannelParams = ChannelParams(),
                       environment: EnvironmentModel = EnvironmentModel(),
                       sensor: SensorModel = SensorModel(), max_sigma: float = 0.3,
                       t0: float = 0.0) -> Transmission:
    """One 134-bit frame with a seeded payload and a seeded noise level in [0, max_sigma]."""
    sigma = float(_rng(seed, 5).uniform(0.0, max_sigma)) if max_sigma > 0 else 0.0
    env = replace(environment, noise_sigma=sigma, rng_seed=int(seed))
    return transmit(random_frame(seed), channel, env, sensor, t0=t0)


def server_room_trace(seed: int, inject_at: float, hours: float = 6.0,
                      channel: ChannelParams = ChannelParams(temp_H=21.0, temp_L=18.0),
                      sensor: SensorModel = SensorModel(), sigma: float = 0.15) -> tuple[TemperatureTrace, int]:
    """A tightly regulated room with one frame injected at ``inject_at`` seconds.

    Returns the sensor trace and the sample index where the frame starts.
    """
    fs = sensor.sample_rate
    n = int(hours * 3600 * fs)
    env = EnvironmentModel(ambient_temp=channel.temp_L, noise_sigma=0.0)
    tx = transmit(random_frame(seed), channel, env, sensor, lead_in=0.0, tail_slots=0)
    room = np.full(n, channel.temp_L)
    i0 = int(round(inject_at * fs))
    k = min(len(tx.room), n - i0)
    room[i0:i0 + k] = tx.room.samples[:k]
    room_trace = TemperatureTrace(fs, 0.0, room, ROOM_TRUE)
    sensed = sense(room_trace, sensor, replace(env, noise_sigma=sigma, rng_seed=int(seed)))
    return sensed, i0


# --- spurious artifacts for the false-preamble suite ----------------------

ARTIFACT_KINDS = ("spike", "step", "hump", "mimic")


def artifact_profile(kind: str, seed: int, fs: float, channel: ChannelParams,
                     environment: EnvironmentModel) -> np.ndarray:
    """Room temperature offset (degC above ambient) of one non-transmitter event.

    ``spike``: a space heater burst, much faster than the air conditioner.
    ``step``: a door left open, a one-way change that then holds.
    ``hump``: a slow rise and fall over tens of minutes.
    ``mimic``: an air-conditioner-paced rise and fall followed by a pattern
    that reads as an unused opcode, so it is detected and then rejected.
    """
    rng = _rng(seed, 6)
    dt = 1.0 / fs
    if kind == "spike":
        amp = rng.uniform(1.5, 3.0)
        ramp = rng.uniform(15.0, 40.0)
        t = np.arange(0, 2 * ramp, dt)
        return amp * (1 - np.abs(t - ramp) / ramp)
    if kind == "step":
        amp = rng.uniform(1.0, 2.5) * rng.choice([-1.0, 1.0])
        ramp = rng.uniform(60.0, 300.0)
        t = np.arange(0, ramp + 1800.0, dt)
        return amp * np.clip(t / ramp, 0.0, 1.0)
    if kind == "hump":
        amp = rng.uniform(1.0, 2.5)
        half = rng.uniform(900.0, 1800.0)
        t = np.arange(0, 2 * half, dt)
        return amp * np.sin(np.pi * t / (2 * half)) ** 2
    if kind == "mimic":
        from .framing import frame_schedule
        from .thermal_env import simulate_room

        # preamble + "111": opcode 7 is unused in the default table
        env = replace(environment, noise_sigma=0.0)
        room = simulate_room(frame_schedule([1, 0, 1, 1, 1], channel, env.ascent_rate), env, fs,
                             start_temp=channel.temp_L)
        return room.samples - channel.temp_L
    raise ValueError(f"unknown artifact kind {kind!r}")


def artifact_then_frame(seed: int, kind: str | None = None, channel: ChannelParams = ChannelParams(),
                        environment: EnvironmentModel = EnvironmentModel(),
                        sensor: SensorModel = SensorModel(), gap: float = 900.0):
    """A spurious thermal event, a quiet gap, then one valid frame.

    Returns ``(smoothed trace, sent bits, true anchor time, kind)``.
    """
    kind = kind or ARTIFACT_KINDS[seed % len(ARTIFACT_KINDS)]
    fs = sensor.sample_rate
    env = replace(environment, rng_seed=int(seed))
    bits = random_frame(seed)
    prof = artifact_profile(kind, seed, fs, channel, env)
    lead = 600.0
    pre = lead + prof.size / fs + gap
    tx = transmit(bits, channel, replace(env, noise_sigma=0.0), sensor, lead_in=pre)
    room = tx.room.samples.copy()
    i0 = int(round(lead * fs))
    room[i0:i0 + prof.size] += prof
    if kind == "step":
        # the door stays open: everything after the event keeps the offset
        room[i0 + prof.size:] += prof[-1]
    room_trace = TemperatureTrace(fs, 0.0, room, ROOM_TRUE)
    sensed = sense(room_trace, sensor, env)
    smoothed = maf_smooth(sensed, channel.maf_window_w)
    return smoothed, bits, tx.anchor_time, kind
