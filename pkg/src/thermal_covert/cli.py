"""``thermal-covert`` command line.

Exit codes: 0 success (frame accepted, trace clean, all checks passed),
1 the negative outcome of the command (no frame, alarms found, a check
failed), 2 usage error, 3 runtime error (bad config, unreadable trace).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

from . import __version__
from .config import load_config
from .detector import scan_multi, scan_trace
from .errors import ThermalCovertError
from .framing import EventKind, payload_from_hex, build_frame, rx_state_machine
from .harness import run_once, run_sweep, transmit, write_sweep_csv
from .modem import maf_smooth
from .thermal_env import SMOOTHED, export_traces, import_trace

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3
DEFAULT_CONFIG = "table6.json"


def _numbers(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _seeds(text: str) -> list[int]:
    """``"0-19"`` or ``"1,5,9"``."""
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected seeds like 0-19 or 1,2,3, got {text!r}") from None


def _opcode(text: str) -> int:
    if len(text) == 3 and set(text) <= {"0", "1"}:
        return int(text, 2)
    raise argparse.ArgumentTypeError(f"opcode is three binary digits, got {text!r}")


def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    opcode = args.opcode if args.opcode is not None else cfg.experiment.opcode
    if opcode not in cfg.table:
        raise ThermalCovertError(f"opcode {opcode:03b} is not in the opcode table")
    payload = payload_from_hex(args.payload_hex, cfg.table.payload_length(opcode))
    bits = build_frame(opcode, payload, cfg.parity_present, cfg.table)
    env = cfg.environment if args.seed is None else replace(cfg.environment, rng_seed=args.seed)
    tx = transmit(bits, cfg.channel, env, cfg.sensor, cfg.warmup)
    export_traces([tx.room, tx.sensed], args.out)
    print(f"{len(bits)} bits, {len(tx.sensed)} sensor samples over {tx.sensed.duration:.0f} s -> {args.out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = load_config(args.config)
    trace = import_trace(args.input, kind=args.kind, sample_rate=cfg.channel.sample_rate)
    smoothed = trace if trace.kind == SMOOTHED else maf_smooth(trace, cfg.channel.maf_window_w)
    events = rx_state_machine(smoothed, cfg.channel, cfg.table, cfg.parity_present, cfg.window,
                              cfg.environment.ascent_rate)
    accepted = 0
    for ev in events:
        if ev.kind is EventKind.BIT and not args.bits:
            continue
        print(ev.describe(cfg.table))
        if ev.kind is EventKind.FRAME_ACCEPTED:
            accepted += 1
            print(ev.detail.hexdump(cfg.table))
    if not accepted:
        print("no frame accepted")
    return EXIT_OK if accepted else EXIT_NEGATIVE


def cmd_loopback(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.experiment.seeds[0]
    r = run_once(cfg.spec(seeds=(seed,)), seed)
    verdict = "FRAME ACCEPTED" if r.accepted else "FRAME REJECTED"
    print(f"{r.frame_bits} bits, {r.bph:.1f} bph, BER {r.ber:.3f}, {verdict}")
    return EXIT_OK if r.accepted else EXIT_NEGATIVE


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seeds = args.seeds if args.seeds is not None else cfg.experiment.seeds
    try:
        spec = cfg.spec(seeds=seeds, sweep=(args.param, tuple(args.values)))
    except ValueError as exc:
        raise ThermalCovertError(str(exc)) from None
    results = run_sweep(spec)
    text = write_sweep_csv(results, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        for res in results:
            print(f"{res.param}={res.value:g}: median BER {res.median_ber:.3f}, "
                  f"{sum(r.accepted for r in res.runs)}/{len(res.runs)} accepted")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    traces = [import_trace(p, kind=args.kind) for p in args.input]
    ids = list(args.input)
    if len(traces) == 1:
        alarms = scan_trace(traces[0], cfg.detector, ids[0])
    else:
        alarms = scan_multi(traces, cfg.detector, ids)
    for a in alarms:
        print(json.dumps(a.to_json()))
    return EXIT_NEGATIVE if alarms else EXIT_OK


def cmd_paper_repro(args) -> int:
    from .repro import paper_repro, render_table

    tic = time.perf_counter()
    checks, _ = paper_repro(args.seed, args.out_dir, full=args.full, config=args.config)
    wall = time.perf_counter() - tic
    sys.stdout.write(render_table(checks))
    print(f"wall time {wall:.1f} s" + (f", outputs in {args.out_dir}" if args.out_dir else ""))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NEGATIVE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermal-covert",
                                     description="Thermal covert channel simulator, receiver and detector.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def with_config(p):
        p.add_argument("--config", default=DEFAULT_CONFIG,
                       help="JSON config (default: the bundled table6.json)")
        return p

    p = with_config(sub.add_parser("encode", help="simulate one frame and write its traces"))
    p.add_argument("--payload-hex", required=True, help="payload, MSB first")
    p.add_argument("--opcode", type=_opcode, help="three binary digits (default from config)")
    p.add_argument("--out", required=True, help="output trace CSV")
    p.add_argument("--seed", type=int, help="noise seed (default: environment.rng_seed)")
    p.set_defaults(func=cmd_encode)

    p = with_config(sub.add_parser("decode", help="run the receiver over a trace CSV"))
    p.add_argument("--in", dest="input", required=True, help="trace CSV")
    p.add_argument("--kind", help="which trace in the file (default: sensor_quantized if present)")
    p.add_argument("--bits", action="store_true", help="also print one event per decoded bit")
    p.set_defaults(func=cmd_decode)

    p = with_config(sub.add_parser("loopback", help="transmit and receive one frame"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_loopback)

    p = with_config(sub.add_parser("sweep", help="BER over a list of parameter values, as CSV"))
    p.add_argument("--param", required=True, help="e.g. noise_sigma or channel.slot_T")
    p.add_argument("--values", required=True, type=_numbers, help="comma-separated values")
    p.add_argument("--seeds", type=_seeds, help="0-19 or 1,2,3 (default from config)")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_sweep)

    p = with_config(sub.add_parser("detect", help="scan traces for covert-channel activity"))
    p.add_argument("--in", dest="input", action="append", required=True,
                   help="trace CSV; repeat for several rooms")
    p.add_argument("--kind", help="which trace in each file (default: sensor_quantized if present)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("paper-repro", help="run the frozen reproduction and print pass/fail")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="write the output files here")
    p.add_argument("--full", action="store_true", help="run every check at full size (slower)")
    p.add_argument("--config", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_paper_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ThermalCovertError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
