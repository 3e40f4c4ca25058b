"""Command-line runner: ``sdrx {sweep,stream,bench,replay}``.

Exit codes: 0 success, 2 configuration error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import sys
from dataclasses import replace
from pathlib import Path

from .channel import load_buffers
from .config import ConfigError, ExperimentConfig, parse_config
from .experiments import Link, bench, run_b2b_sweep, run_stream
from .signal import Format

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 2, 3

SWEEP_HEADER = ["format", "osnr_db", "bits", "errors", "ber", "q_db", "status"]
SERIES_HEADER = ["window_start_s", "bits", "errors", "ber", "q_db"]
BENCH_HEADER = ["chain", "streams", "buffers", "wall_time_s", "samples_per_s", "realtime_factor"]

COMMAND_MODE = {"sweep": "b2b_sweep", "stream": "stream_run", "bench": "bench", "replay": "replay"}


def _num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:g}"


def _q(value, bound):
    if math.isnan(value):
        return "nan"
    return f">{value:.3f}" if bound else f"{value:.3f}"


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            ber = f"{r.ber:.6e}" if r.bits else "nan"
            w.writerow([r.format, _num(r.osnr_db), r.bits, r.errors, ber, _q(r.q_db, r.q_is_bound), r.status])


def write_series_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for r in records:
            w.writerow([f"{r.window_start:.9f}", r.bits_counted, r.bit_errors, f"{r.ber:.6e}", r.q_text()])


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow([r.chain, r.streams, r.buffers, f"{r.wall_time:.6f}", f"{r.samples_per_s:.6g}",
                        f"{r.realtime_factor:.6g}"])


def _link(cfg, osnr_db=math.inf):
    overrides = {}
    if cfg.cspr_db is not None and not cfg.format.is_pam:
        overrides["cspr_db"] = cfg.cspr_db
    lk = Link.preset(cfg.format, osnr_db=osnr_db, seed=cfg.seed, buffer_len=cfg.buffer_len,
                    quantize=cfg.quantize, **overrides)
    return replace(lk, prbs_order=cfg.prbs_order, lms_step=cfg.lms_step)


def _png(path):
    return str(Path(path).with_suffix(".png"))


def _report_lines(rep):
    yield f"buffers={rep.buffers}"
    yield f"samples={rep.samples}"
    yield f"wall_time_s={rep.wall_time:.6f}"
    yield f"samples_per_s={rep.samples_per_s:.6g}"
    yield f"buffers_per_s={rep.buffers_per_s:.6g}"
    yield f"realtime_factor={rep.realtime_factor:.6g}"
    for k, v in sorted(rep.stage_share.items()):
        yield f"stage_share.{k}={v:.4f}"


def cmd_sweep(cfg, out):
    rows = run_b2b_sweep(_link(cfg), cfg.osnr_points, cfg.num_symbols, cfg.num_streams)
    write_sweep_csv(rows, cfg.output)
    for r in rows:
        print(f"{r.format} osnr={_num(r.osnr_db)} ber={r.ber:.3e} q={_q(r.q_db, r.q_is_bound)} {r.status}", file=out)
    if cfg.plot:
        from .plotting import plot_sweep

        plot_sweep(rows, _png(cfg.output))
    return EXIT_OK


def _stream_common(cfg, out, buffers=None):
    res = run_stream(_link(cfg, cfg.osnr_db), cfg.num_buffers, cfg.window_len, cfg.num_streams,
                     buffers=buffers, dump_to=cfg.dump_path if buffers is None else None)
    write_series_csv(res.records, cfg.output)
    for line in _report_lines(res.report):
        print(line, file=out)
    if cfg.plot and res.records:
        from .plotting import plot_timeseries

        plot_timeseries(res.records, _png(cfg.output))
    if res.fault:
        print(f"fault: {res.fault}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def cmd_stream(cfg, out):
    return _stream_common(cfg, out)


def cmd_replay(cfg, out):
    path = Path(cfg.replay_path)
    if not path.is_file():
        raise ConfigError(f"replay file not found: {path}")
    bufs = load_buffers(path)
    try:
        first = next(bufs)
    except StopIteration:
        raise ConfigError(f"replay file holds no buffers: {path}") from None
    cfg = replace(cfg, buffer_len=first.adc.buffer_len)
    return _stream_common(cfg, out, buffers=itertools.chain([first], bufs))


def cmd_bench(cfg, out, multi=4):
    pam = cfg.format if cfg.format.is_pam else Format.PAM4
    kk = cfg.format if not cfg.format.is_pam else Format.QPSK
    rows = []
    for fmt in (pam, kk):
        rows += bench(fmt, cfg.bench_buffers, (1, multi), cfg.bench_repeats, cfg.buffer_len, cfg.seed)
    write_bench_csv(rows, cfg.output)
    for r in rows:
        print(f"{r.chain} streams={r.streams} samples_per_s={r.samples_per_s:.4g} "
              f"realtime_factor={r.realtime_factor:.4g} wall_time_s={r.wall_time:.4f}", file=out)
    if cfg.plot:
        from .plotting import plot_bench

        plot_bench(rows, _png(cfg.output))
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "stream": cmd_stream, "bench": cmd_bench, "replay": cmd_replay}


def build_parser():
    p = argparse.ArgumentParser(prog="sdrx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sweep", "back-to-back Q versus OSNR sweep"),
        ("stream", "continuous multi-buffer run with windowed Q"),
        ("bench", "receiver throughput for both chains"),
        ("replay", "run a receiver over a buffer dump file"),
    ]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="noise seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--streams", type=int, help="pipeline lanes")
        sp.add_argument("--format", help="modulation format")
        sp.add_argument("--plot", action="store_true", help="also write a PNG next to the CSV")
        if name == "stream":
            sp.add_argument("--dump", help="write the captured buffers to this file")
        if name == "replay":
            sp.add_argument("--input", help="buffer dump to replay")
    return p


def resolve_config(args):
    mode = COMMAND_MODE[args.command]
    cfg = parse_config(args.config) if args.config else ExperimentConfig(mode=mode)
    if cfg.mode is not None and cfg.mode != mode:
        raise ConfigError(f"config mode {cfg.mode!r} does not match command {args.command!r}")
    over = {"mode": mode}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["output_path"] = args.out
    if args.streams is not None:
        over["num_streams"] = args.streams
    if args.format is not None:
        try:
            over["format"] = Format.parse(args.format)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.plot:
        over["plot"] = True
    if getattr(args, "dump", None):
        over["dump_path"] = args.dump
    if getattr(args, "input", None):
        over["replay_path"] = args.input
    return replace(cfg, **over).validate()


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "bench":
            return cmd_bench(cfg, out, multi=args.streams or 4)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-fault exit code
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
