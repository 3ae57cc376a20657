"""Frozen reproduction run behind ``thermal-covert paper-repro``.

Each check mirrors one acceptance criterion at a size that fits the wall
time budget (``full=True`` runs every check at its full size). Output files
carry no timings or paths, so two runs with the same seed are
byte-identical; wall time is only reported on the console.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import synth
from .config import Config, load_config
from .detector import scan_trace
from .framing import (
    DEFAULT_OPCODES, EventKind, FrameRejected, OpcodeTable, build_frame, majority_vote, parse_frame,
    rx_state_machine,
)
from .harness import run_loopback, run_once, run_sweep, transmit, write_sweep_csv
from .modem import DECODE_TABLE, Trend, maf_smooth
from .thermal_env import TemperatureTrace, trace_to_csv_text

WALL_BUDGET_S = 10.0


@dataclass(frozen=True)
class Check:
    number: int
    name: str
    passed: bool
    detail: str


def _pass(n, name, ok, detail) -> Check:
    return Check(n, name, bool(ok), detail)


def check_rate(cfg: Config, seed: int) -> tuple[Check, object]:
    tic = time.perf_counter()
    res = run_loopback(cfg.spec(seeds=(seed,)))
    wall = time.perf_counter() - tic
    r = res.runs[0]
    slot = cfg.channel.slot_T
    ok = (r.frame_bits == 134 and math.isclose(r.bph, 3600.0 / slot) and abs(r.airtime_s - 134 * slot) <= slot
          and r.accepted and r.bit_errors == 0)
    detail = (f"{r.frame_bits} bits, {r.bph:.1f} bph, nominal {r.duration_s:.0f} s, "
              f"airtime {r.airtime_s:.0f} s ({r.airtime_s / 3600:.2f} h)")
    return _pass(1, "bit rate and frame duration", ok and wall < WALL_BUDGET_S, detail), r


def check_noise_free(cfg: Config, n: int) -> Check:
    spec = cfg.spec(seeds=tuple(range(n)))
    spec = replace(spec, environment=replace(spec.environment, noise_sigma=0.0), payload_hex=None)
    res = run_loopback(spec)
    accepted = sum(r.accepted for r in res.runs)
    return _pass(2, "noise-free end to end", accepted == n and res.ber == 0,
                 f"{accepted}/{n} accepted, BER {res.ber:.3f}")


def check_exhaustive(cfg: Config, opcodes) -> Check:
    table = OpcodeTable({c: (name, 8) for c, (name, _) in DEFAULT_OPCODES.entries.items()})
    base = replace(cfg.spec(), table=table, environment=replace(cfg.environment, noise_sigma=0.0))
    runs = bad = 0
    for op in opcodes:
        for v in range(256):
            r = run_once(replace(base, opcode=op, payload_hex=format(v, "02x")), 0)
            runs += 1
            bad += (r.bit_errors > 0 or not r.accepted)
    return _pass(3, "exhaustive 8-bit codec", bad == 0,
                 f"{runs - bad}/{runs} round trips over {len(opcodes)} opcode(s)")


def check_parity(seed: int) -> Check:
    payload = np.random.default_rng([seed, 7]).integers(0, 2, 128).tolist()
    frame = build_frame(0, payload)
    accepted = 0
    for k in range(2, len(frame)):
        flipped = list(frame)
        flipped[k] ^= 1
        try:
            parse_frame(flipped, preamble=True, exact=True)
            accepted += 1
        except FrameRejected:
            pass
    return _pass(4, "parity soundness", accepted == 0, f"{len(frame) - 2} flips, {accepted} accepted")


def check_maf(seed: int, n: int) -> Check:
    rng = np.random.default_rng([seed, 8])
    worst = 0.0
    for _ in range(n):
        size = int(rng.integers(2, 400))
        w = int(rng.integers(0, size))
        x = rng.uniform(20, 32, size)
        got = maf_smooth(TemperatureTrace(3.3, 0.0, x), w).samples
        ref = np.array([sum(x[i:i + w + 1]) / (w + 1) for i in range(size - w)])
        worst = max(worst, float(np.max(np.abs(got - ref))))
    const = maf_smooth(TemperatureTrace(3.3, 0.0, np.full(500, 27.3)), 198).samples
    ok = worst <= 1e-9 and np.all(const == 27.3)
    return _pass(5, "moving average", ok, f"{n} arrays, max error {worst:.1e} degC")


def check_decode_table() -> Check:
    expected = {(0, "UP"): 1, (0, "FLAT"): 0, (0, "DOWN"): 0, (1, "UP"): 1, (1, "FLAT"): 1, (1, "DOWN"): 0}
    wrong = [k for k, v in expected.items() if DECODE_TABLE[(k[0], Trend(k[1]))] != v]
    return _pass(6, "trend decode table", not wrong, f"6 cells, {len(wrong)} wrong")


def check_degradation(cfg: Config, n_seeds: int) -> tuple[Check, str]:
    spec = replace(cfg.spec(seeds=tuple(range(n_seeds))), payload_hex=None)
    sig = run_sweep(replace(spec, sweep=("noise_sigma", (0.0, 0.3, 0.6, 1.2))))
    slot = run_sweep(replace(spec, sweep=("slot_T", (60.0, 90.0, 120.0))))
    m_sig = [r.median_ber for r in sig]
    m_slot = [r.median_ber for r in slot]
    ok = all(b >= a for a, b in zip(m_sig, m_sig[1:])) and all(b <= a for a, b in zip(m_slot, m_slot[1:]))
    csv_text = write_sweep_csv(sig + slot, None)
    detail = ("median BER sigma " + "/".join(f"{m:.3f}" for m in m_sig)
              + "; slot_T " + "/".join(f"{m:.3f}" for m in m_slot))
    return _pass(7, "monotone degradation", ok, detail), csv_text


def check_false_preamble(cfg: Config, n: int) -> Check:
    valid = wrong = 0
    for s in range(n):
        smoothed, bits, _, _ = synth.artifact_then_frame(s, channel=cfg.channel, environment=cfg.environment,
                                                         sensor=cfg.sensor)
        events = rx_state_machine(smoothed, cfg.channel, cfg.table, cfg.parity_present, None,
                                  cfg.environment.ascent_rate)
        got = [e.detail.bits() for e in events if e.kind is EventKind.FRAME_ACCEPTED]
        valid += any(g == bits for g in got)
        wrong += sum(g != bits for g in got)
    return _pass(8, "false-preamble robustness", valid == n and wrong == 0,
                 f"{valid}/{n} valid accepted, {wrong} artifact frames accepted")


def check_majority(seed: int, trials: int) -> Check:
    exact = 0
    for t in range(trials):
        rng = np.random.default_rng([seed, 9, t])
        frame = build_frame(0, rng.integers(0, 2, 128).tolist())
        spots = rng.choice(np.arange(2, len(frame)), size=5, replace=False)
        copies = []
        for k in spots:
            c = list(frame)
            c[k] ^= 1
            copies.append(c)
        exact += majority_vote(copies, len(frame)) == frame
    return _pass(9, "majority vote", exact == trials, f"{exact}/{trials} exact")


def check_detector(cfg: Config, n: int) -> tuple[Check, str]:
    dcfg = cfg.detector
    quiet = sum(len(scan_trace(synth.quiet_trace(s, sensor=cfg.sensor), dcfg)) for s in range(n))
    lines = []
    hit = 0
    for s in range(n):
        tx = synth.transmission_trace(s, cfg.channel, cfg.environment, cfg.sensor)
        alarms = scan_trace(tx.sensed, dcfg, f"tx{s:02d}")
        hit += bool(alarms)
        lines += [json.dumps(a.to_json(), sort_keys=True) for a in alarms]
    bits = synth.random_frame(0)
    scores = []
    for d in (1.0, 2.0, 3.0, 4.0):
        ch = replace(cfg.channel, temp_H=cfg.channel.temp_L + d, diff_D=None)
        tx = transmit(bits, ch, replace(cfg.environment, noise_sigma=0.15, rng_seed=0), cfg.sensor)
        scores.append(max((a.score for a in scan_trace(tx.sensed, dcfg)), default=0.0))
    mono = all(b >= a for a, b in zip(scores, scores[1:]))
    ok = quiet == 0 and hit == n and mono
    detail = (f"{quiet} alarms on {n} quiet, {hit}/{n} transmissions flagged, "
              f"score vs D " + "/".join(f"{s:.3f}" for s in scores))
    return _pass(10, "detector suites", ok, detail), "\n".join(lines) + ("\n" if lines else "")


def _trace_csv(cfg: Config, seed: int) -> str:
    env = replace(cfg.environment, rng_seed=seed)
    tx = transmit(synth.random_frame(seed), cfg.channel, env, cfg.sensor, cfg.warmup)
    return trace_to_csv_text(tx.room, tx.sensed)


def render_table(checks) -> str:
    width = max(len(c.name) for c in checks)
    out = [f"{'#':>2}  {'criterion':<{width}}  result  detail"]
    for c in checks:
        out.append(f"{c.number:>2}  {c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.detail}")
    passed = sum(c.passed for c in checks)
    out.append(f"{passed}/{len(checks)} criteria passed")
    return "\n".join(out) + "\n"


def paper_repro(seed: int = 0, out_dir=None, full: bool = False, config=None) -> tuple[list[Check], dict[str, str]]:
    """Run every check; return them with the output files' contents by name."""
    cfg = config if isinstance(config, Config) else load_config(config or "table6.json")
    checks: list[Check] = []
    rate, _ = check_rate(cfg, seed)
    checks.append(rate)
    checks.append(check_noise_free(cfg, 100 if full else 25))
    checks.append(check_exhaustive(cfg, range(5) if full else (0b011,)))
    checks.append(check_parity(seed))
    checks.append(check_maf(seed, 1000 if full else 200))
    checks.append(check_decode_table())
    deg, sweep_csv = check_degradation(cfg, 20)
    checks.append(deg)
    checks.append(check_false_preamble(cfg, 50 if full else 12))
    checks.append(check_majority(seed, 100))
    det, alarms = check_detector(cfg, 50 if full else 10)
    checks.append(det)

    trace_csv = _trace_csv(cfg, seed)
    again = _trace_csv(cfg, seed)
    checks.append(_pass(11, "determinism", trace_csv == again,
                        "sha256 " + hashlib.sha256(trace_csv.encode()).hexdigest()[:16]))

    files = {
        "frame_trace.csv": trace_csv,
        "sweep.csv": sweep_csv,
        "alarms.jsonl": alarms,
        "results.txt": render_table(checks),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
    return checks, files
