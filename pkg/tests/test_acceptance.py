"""The eleven acceptance criteria at their full sizes and tolerances.

Each test prints one PASS/FAIL line (collected again in the terminal
summary under "acceptance criteria"). Oracles are built here, not taken
from the package: frames are assembled by hand, the moving average is a
plain loop, and the decoding rules are written out literally.
"""

import statistics
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np

from thermal_covert import synth
from thermal_covert.detector import scan_trace
from thermal_covert.framing import (
    DEFAULT_OPCODES, EventKind, FrameRejected, OpcodeTable, majority_vote, parse_frame, rx_state_machine,
)
from thermal_covert.harness import run_loopback, run_sweep, transmit
from thermal_covert.modem import DECODE_TABLE, Trend, maf_smooth
from thermal_covert.thermal_env import TemperatureTrace


def hand_frame(opcode: int, payload) -> list[int]:
    op = [(opcode >> 2) & 1, (opcode >> 1) & 1, opcode & 1]
    parity = (sum(op) + sum(payload)) % 2
    return [1, 0] + op + [parity] + list(payload)


def accepted_bits(tx, cfg, table=DEFAULT_OPCODES):
    events = rx_state_machine(tx.smoothed, cfg.channel, table, True, None, cfg.environment.ascent_rate)
    return [e.detail.bits() for e in events if e.kind is EventKind.FRAME_ACCEPTED]


def test_1_bit_rate_and_duration(cfg, acceptance_report):
    tic = time.perf_counter()
    res = run_loopback(cfg.spec())
    wall = time.perf_counter() - tic
    r = res.runs[0]
    n_bits = 2 + 3 + 1 + 128
    nominal = n_bits * 90.0
    expected_bph = n_bits / (nominal / 3600.0)
    ok = (expected_bph == 40.0 and r.frame_bits == n_bits and res.bph == 40.0 and r.duration_s == nominal == 12060.0
          and abs(r.airtime_s - 12060.0) <= 90.0 and r.accepted and r.bit_errors == 0 and wall < 10.0)
    acceptance_report(1, "bit rate and frame duration", ok,
                      f"{r.frame_bits} bits, {res.bph:.1f} bph, nominal {r.duration_s:.0f} s, "
                      f"airtime {r.airtime_s:.0f} s, wall {wall:.2f} s")
    assert ok


def test_2_noise_free_end_to_end(cfg, acceptance_report):
    rng = np.random.default_rng(20240601)
    env = replace(cfg.environment, noise_sigma=0.0)
    good = 0
    errors = total = 0
    for k in range(100):
        payload = rng.integers(0, 2, 128).tolist()
        sent = hand_frame(0, payload)
        tx = transmit(sent, cfg.channel, replace(env, rng_seed=k), cfg.sensor)
        got = accepted_bits(tx, cfg)
        good += got == [sent]
        decoded = got[0] if got else [1 - b for b in sent]
        errors += sum(a != b for a, b in zip(sent[2:], decoded[2:]))
        total += len(sent) - 2
    ber = errors / total
    ok = good == 100 and ber == 0.0
    acceptance_report(2, "noise-free end to end", ok, f"{good}/100 accepted, BER {ber:.3f}")
    assert ok


def test_3_exhaustive_8_bit_codec(cfg, acceptance_report):
    table = OpcodeTable({code: (name, 8) for code, (name, _) in DEFAULT_OPCODES.entries.items()})
    env = replace(cfg.environment, noise_sigma=0.0)
    tic = time.perf_counter()
    runs = bad = 0
    for code in sorted(table.entries):
        for value in range(256):
            sent = hand_frame(code, [(value >> (7 - i)) & 1 for i in range(8)])
            tx = transmit(sent, cfg.channel, env, cfg.sensor)
            runs += 1
            bad += accepted_bits(tx, cfg, table) != [sent]
    wall = time.perf_counter() - tic
    ok = runs == 1280 and bad == 0 and wall < 60.0
    acceptance_report(3, "exhaustive 8-bit codec", ok, f"{runs - bad}/{runs} round trips, wall {wall:.1f} s")
    assert ok


def test_4_parity_soundness(acceptance_report):
    payload = [(k * 7 + 3) % 5 % 2 for k in range(128)]
    frame = hand_frame(0, payload)
    assert len(frame) == 134
    accepted = 0
    for k in range(2, 134):
        flipped = list(frame)
        flipped[k] ^= 1
        try:
            parse_frame(flipped, preamble=True, exact=True)
            accepted += 1
        except FrameRejected:
            pass
    ok = accepted == 0
    acceptance_report(4, "parity soundness", ok, f"132 flips, {accepted} accepted")
    assert ok


def test_5_moving_average(acceptance_report):
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 500))
        w = int(rng.integers(0, n))
        x = rng.uniform(15.0, 35.0, n).tolist()
        ref = []
        for i in range(n - w):
            acc = 0.0
            for j in range(i, i + w + 1):
                acc += x[j]
            ref.append(acc / (w + 1))
        got = maf_smooth(TemperatureTrace(3.3, 0.0, x), w).samples
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
    constant_ok = all(
        np.all(maf_smooth(TemperatureTrace(3.3, 0.0, np.full(n, c)), w).samples == c)
        for c, n, w in ((27.3, 500, 198), (-4.1, 10, 9), (0.1, 300, 0))
    )
    ok = worst <= 1e-9 and constant_ok
    acceptance_report(5, "moving average", ok, f"1000 arrays, max error {worst:.1e} degC, constants held")
    assert ok


def test_6_decode_table(acceptance_report):
    rules = {
        (0, Trend.UP): 1, (0, Trend.FLAT): 0, (0, Trend.DOWN): 0,
        (1, Trend.UP): 1, (1, Trend.FLAT): 1, (1, Trend.DOWN): 0,
    }
    wrong = [cell for cell, bit in rules.items() if DECODE_TABLE[cell] != bit]
    ok = not wrong and len(DECODE_TABLE) == 6
    acceptance_report(6, "trend decode table", ok, f"6 cells, {len(wrong)} wrong")
    assert ok


def test_7_monotone_degradation(cfg, acceptance_report):
    spec = replace(cfg.spec(seeds=tuple(range(20))), payload_hex=None)
    sig = run_sweep(replace(spec, sweep=("noise_sigma", (0.0, 0.3, 0.6, 1.2))))
    slot = run_sweep(replace(spec, sweep=("slot_T", (60.0, 90.0, 120.0))))
    m_sig = [statistics.median(r.ber for r in res.runs) for res in sig]
    m_slot = [statistics.median(r.ber for r in res.runs) for res in slot]
    ok = all(b >= a for a, b in zip(m_sig, m_sig[1:])) and all(b <= a for a, b in zip(m_slot, m_slot[1:]))
    acceptance_report(7, "monotone degradation", ok,
                      "median BER over sigma " + "/".join(f"{m:.3f}" for m in m_sig)
                      + f"; over slot_T at sigma {cfg.environment.noise_sigma:g} "
                      + "/".join(f"{m:.3f}" for m in m_slot))
    assert ok


def test_8_false_preamble_robustness(cfg, acceptance_report):
    valid = wrong = 0
    kinds = {}
    for seed in range(50):
        smoothed, sent, _, kind = synth.artifact_then_frame(seed, channel=cfg.channel,
                                                            environment=cfg.environment, sensor=cfg.sensor)
        kinds[kind] = kinds.get(kind, 0) + 1
        events = rx_state_machine(smoothed, cfg.channel, cfg.table, cfg.parity_present, None,
                                  cfg.environment.ascent_rate)
        got = [e.detail.bits() for e in events if e.kind is EventKind.FRAME_ACCEPTED]
        valid += sent in got
        wrong += sum(g != sent for g in got)
    ok = valid == 50 and wrong == 0
    mix = ", ".join(f"{k} {v}" for k, v in sorted(kinds.items()))
    acceptance_report(8, "false-preamble robustness", ok,
                      f"{valid}/50 valid accepted, {wrong} artifact frames accepted ({mix})")
    assert ok


def test_9_majority_vote(acceptance_report):
    exact = 0
    for trial in range(100):
        rng = np.random.default_rng([99, trial])
        frame = hand_frame(0, rng.integers(0, 2, 128).tolist())
        spots = rng.choice(np.arange(len(frame)), size=5, replace=False)
        copies = []
        for k in spots:
            c = list(frame)
            c[k] ^= 1
            copies.append(c)
        exact += majority_vote(copies, len(frame)) == frame
    ok = exact == 100
    acceptance_report(9, "majority vote", ok, f"{exact}/100 exact")
    assert ok


def test_10_detector_suites(cfg, acceptance_report):
    dcfg = cfg.detector
    quiet_alarms = sum(len(scan_trace(synth.quiet_trace(s, sensor=cfg.sensor), dcfg)) for s in range(50))
    flagged = 0
    for s in range(50):
        tx = synth.transmission_trace(s, cfg.channel, cfg.environment, cfg.sensor)
        flagged += bool(scan_trace(tx.sensed, dcfg))
    monotone = 0
    for seed in range(5):
        bits = synth.random_frame(seed)
        env = replace(cfg.environment, noise_sigma=0.15, rng_seed=seed)
        scores = []
        for d in (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0):
            ch = replace(cfg.channel, temp_H=cfg.channel.temp_L + d, diff_D=None)
            tx = transmit(bits, ch, env, cfg.sensor)
            scores.append(max((a.score for a in scan_trace(tx.sensed, dcfg)), default=0.0))
        monotone += all(b >= a for a, b in zip(scores, scores[1:]))
    ok = quiet_alarms == 0 and flagged == 50 and monotone == 5
    acceptance_report(10, "detector suites", ok,
                      f"{quiet_alarms} alarms on 50 quiet, {flagged}/50 transmissions flagged, "
                      f"score non-decreasing in D for {monotone}/5 seeds")
    assert ok


def test_11_determinism(tmp_path, acceptance_report):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = []
    for d in dirs:
        proc = subprocess.run([sys.executable, "-m", "thermal_covert.cli", "paper-repro", "--seed", "0",
                               "--out-dir", str(d)], capture_output=True, text=True)
        codes.append(proc.returncode)
    names = sorted(p.name for p in dirs[0].iterdir())
    same = names == sorted(p.name for p in dirs[1].iterdir()) and all(
        (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    ok = same and len(names) == 4 and codes == [0, 0]
    acceptance_report(11, "determinism", ok, f"{len(names)} files byte-identical across two runs: {same}")
    assert ok
