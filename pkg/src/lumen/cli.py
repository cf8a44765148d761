"""Command-line front end: ``lumen devices | channel | sweep``.

Exit codes: 0 success, 1 the run completed but failed its check (bit errors,
missed planted window), 2 usage or configuration error. Reports go to stdout
or ``--output``; the human summary goes to stderr.
"""

import argparse
import json
import math
import sys
from importlib import resources

import numpy as np

from . import __version__
from .channel import ChannelParams, Modulator
from .core import assemble
from .devices import (find_device, library_summary, load_boards, load_device_library,
                      read_library_text, render_matrix)
from .exceptions import LumenError
from .gpio import BoardWiring, SensorMode, Terminal
from .link import OVERHEAD_BITS, measure_link
from .sweep import (InjectionPath, OpticalPath, SweepConfig, VulnerabilityProfile, results_csv,
                    run_sweep, summarize, summary_json)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text, output):
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _note(msg):
    print(msg, file=sys.stderr)


def _load_library(path):
    text = read_library_text(path)
    return load_device_library(text), load_boards(text)


def cmd_devices(args):
    devices, _ = _load_library(args.library)
    summary = library_summary(devices)
    pct = round(100 * summary["exploitable_fraction"])
    if args.format == "json":
        _emit(json.dumps(summary, indent=2, sort_keys=True) + "\n", args.output)
    else:
        text = render_matrix(devices) + "\n"
        text += f"{summary['responsive_cells']} responsive cells\n"
        text += f"{summary['exploitable']}/{summary['devices']} devices exploitable ({pct}%)\n"
        _emit(text, args.output)
    return EXIT_OK


def _payloads(seed, n_frames, size):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return [rng.integers(0, 256, size, dtype=np.uint8).tobytes() for _ in range(n_frames)]


def cmd_channel(args):
    devices, boards = _load_library(args.library)
    try:
        device = find_device(devices, args.device)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    if not 0 <= args.payload_size <= 255:
        raise UsageError("--payload-size must be within 0..255")
    terminal = Terminal(args.terminal)
    if args.board:
        match = [b for b in boards if b.name == args.board]
        if not match:
            raise UsageError(f"no board named {args.board!r} in the library")
        board = match[0]
    else:
        board = BoardWiring(sense=terminal)

    n_frames = args.frames
    if args.bits:
        n_frames = max(1, math.ceil(args.bits / (OVERHEAD_BITS + 8 * args.payload_size)))
    payloads = _payloads(args.seed, n_frames, args.payload_size)
    channel_seed = int(np.random.SeedSequence(args.seed, spawn_key=(1,)).generate_state(1, np.uint64)[0])
    channel = ChannelParams(args.coupling, args.ambient, args.noise, channel_seed)
    report = measure_link(payloads, args.rate, Modulator(args.modulator), channel, device,
                          terminal, args.excitation, board, peak_w_m2=args.peak,
                          samples_per_symbol=args.samples_per_symbol,
                          mode=SensorMode(args.mode))
    if args.format == "csv":
        _emit(report.frames_csv(), args.output)
    else:
        _emit(report.to_json(include_frames=args.include_frames), args.output)
    _note(f"{device.name}: {report.frames_ok}/{report.frames_sent} frames ok, "
          f"BER {report.ber:.3g}, goodput {report.goodput_bit_s:.6g} bit/s "
          f"at {report.raw_bit_rate_hz:g} bit/s raw")
    return EXIT_OK if report.ber == 0 and report.bits_total > 0 else EXIT_FAIL


def _read_program(where):
    if where.startswith("builtin:"):
        name = where[len("builtin:"):]
        res = resources.files("lumen").joinpath(f"data/programs/{name}.asm")
        if not res.is_file():
            raise UsageError(f"no built-in program {name!r}")
        return res.read_text(encoding="utf-8")
    with open(where, encoding="utf-8") as fh:
        return fh.read()


def _parse_range(text):
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--range expects MIN:MAX, got {text!r}") from None


def cmd_sweep(args):
    program = assemble(_read_program(args.program))
    try:
        profile = VulnerabilityProfile.parse(args.profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lo, hi = _parse_range(args.range)
    optical = OpticalPath()
    if args.path == "optical":
        devices, _ = _load_library(args.library)
        try:
            device = find_device(devices, args.device)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        optical = OpticalPath(device=device, excitation=args.excitation, terminal=args.terminal,
                              modulator=Modulator(args.modulator), peak_w_m2=args.peak,
                              noise_sigma_w_m2=args.noise)
    config = SweepConfig(lo, hi, args.step, args.reps, args.mask, args.duration, args.probability,
                         args.seed, InjectionPath(args.path), args.tick_seconds, optical)
    results = run_sweep(config, program, profile)
    summary = summarize(results, config, profile)
    if args.format == "json":
        _emit(summary_json(summary), args.output)
    else:
        _emit(results_csv(results), args.output)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(summary_json(summary))

    _note(f"{summary['anomalies']} anomalies over {summary['runs']} runs "
          f"({summary['offsets']} offsets, profile {profile.name})")
    if "recall" in summary:
        _note(f"planted window: recall {summary['recall']:.3f}, precision {summary['precision']:.3f}")
        if summary["recall"] < 1 or summary["precision"] < 1:
            return EXIT_FAIL
    return EXIT_OK


def _int_auto(text):
    return int(text, 0)


def build_parser():
    parser = _Parser(prog="lumen", description="Optical LED injection simulator")
    parser.add_argument("--version", action="version", version=f"lumen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--library", help="device library JSON (default: $LUMEN_DEVICE_LIB or bundled)")
        p.add_argument("--output", "-o", help="write the report here instead of stdout")

    p = sub.add_parser("devices", help="show the LED response matrix")
    common(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_devices)

    def optics(p, device_required):
        p.add_argument("--device", required=device_required, default="5 mm blue LED")
        p.add_argument("--excitation", default="laser640",
                       choices=("laser405", "laser532", "laser640", "white"))
        p.add_argument("--terminal", default="anode", choices=("anode", "cathode"))
        p.add_argument("--modulator", default="eo", choices=("eo", "pockels"))
        p.add_argument("--peak", type=float, default=0.01, help="peak irradiance, W/m^2")
        p.add_argument("--noise", type=float, default=0.0, help="noise sigma, W/m^2")

    p = sub.add_parser("channel", help="measure the covert channel")
    common(p)
    optics(p, device_required=True)
    p.add_argument("--rate", type=float, default=1e6, help="raw bit rate, bit/s")
    p.add_argument("--ambient", type=float, default=0.0)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--bits", type=int, default=0, help="send at least this many frame bits")
    p.add_argument("--payload-size", type=int, default=255)
    p.add_argument("--samples-per-symbol", type=int, default=4)
    p.add_argument("--mode", choices=("photovoltaic", "photoconductive"), default="photovoltaic")
    p.add_argument("--board", help="board name from the library")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--csv", dest="format", action="store_const", const="csv",
                   help="per-frame CSV instead of the JSON report")
    p.add_argument("--include-frames", action="store_true")
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("sweep", help="run the delay-sweep fault-injection experiment")
    common(p)
    p.add_argument("--program", required=True,
                   help="assembler source, or builtin:sweep_target / builtin:opcode_coverage")
    p.add_argument("--profile", default="default", help="none | default | planted:<tick>[,<tick>...]")
    p.add_argument("--range", default="0:1000", help="MIN:MAX delay offsets in ticks (inclusive)")
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--mask", type=_int_auto, default=0xFF)
    p.add_argument("--duration", type=int, default=1)
    p.add_argument("--probability", type=float, default=1.0)
    p.add_argument("--path", choices=("direct", "optical"), default="direct")
    p.add_argument("--tick-seconds", type=float, default=1e-6)
    optics(p, device_required=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--summary", help="also write the JSON summary here")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _note(f"lumen {args.command}: {exc}")
        return EXIT_USAGE
    except (LumenError, ValueError, OSError) as exc:
        _note(f"lumen {args.command}: {type(exc).__name__}: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
