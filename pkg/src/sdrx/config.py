"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key is optional except
where a mode needs it; unknown keys are rejected with their line number.

Keys and defaults
-----------------
=============  ===============  ==================================================
key            default          meaning
=============  ===============  ==================================================
mode           (from command)   b2b_sweep, stream_run, bench or replay
format         PAM4             PAM2, PAM4, PAM8, QPSK or QAM16
osnr_points    5,10,15,20       sweep OSNRs in dB (comma separated; ``inf`` allowed)
num_symbols    1000000          symbols counted per sweep point
osnr_db        15               OSNR of stream and bench runs
num_buffers    100              buffers in a stream run
window_len     0.0001           Q window in seconds of stream time
buffer_len     65536            ADC samples per buffer (multiple of 2048)
num_streams    5                pipeline lanes
seed           0                noise seed
output_path    (per mode)       CSV destination
quantize       true             12-bit quantization on or off
cspr_db        (per format)     KK carrier-to-signal power ratio
lms_step       0.001            DD-LMS step size
prbs_order     15               PRBS order (7, 15, 23 or 31)
replay_path    (none)           dump file read by ``replay``
dump_path      (none)           dump file written by ``stream``
bench_buffers  16               buffers per bench run
bench_repeats  5                timing repeats (best is kept)
plot           false            also render PNG figures next to the CSV
=============  ===============  ==================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from .signal import PRBS_TAPS, Format

MODES = ("b2b_sweep", "stream_run", "bench", "replay")

DEFAULT_OUTPUT = {
    "b2b_sweep": "sweep.csv",
    "stream_run": "stream.csv",
    "bench": "bench.csv",
    "replay": "replay.csv",
}


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str | None = None
    format: Format = Format.PAM4
    osnr_points: tuple = (5.0, 10.0, 15.0, 20.0)
    num_symbols: int = 1_000_000
    osnr_db: float = 15.0
    num_buffers: int = 100
    window_len: float = 1e-4
    buffer_len: int = 65536
    num_streams: int = 5
    seed: int = 0
    output_path: str | None = None
    quantize: bool = True
    cspr_db: float | None = None
    lms_step: float = 1e-3
    prbs_order: int = 15
    replay_path: str | None = None
    dump_path: str | None = None
    bench_buffers: int = 16
    bench_repeats: int = 5
    plot: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode == "b2b_sweep" and not self.osnr_points:
            raise ConfigError("osnr_points must not be empty for a sweep")
        if self.buffer_len <= 0 or self.buffer_len % 2048:
            raise ConfigError(f"buffer_len must be a positive multiple of 2048, got {self.buffer_len}")
        if self.num_streams < 1:
            raise ConfigError("num_streams must be >= 1")
        if self.num_symbols <= 0 or self.num_buffers < 2 or self.bench_buffers < 1 or self.bench_repeats < 1:
            raise ConfigError("counts must be positive (num_buffers >= 2)")
        if not self.window_len > 0:
            raise ConfigError("window_len must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.prbs_order not in PRBS_TAPS:
            raise ConfigError(f"prbs_order must be one of {sorted(PRBS_TAPS)}")
        if self.mode == "replay" and not self.replay_path:
            raise ConfigError("replay needs replay_path")
        if math.isnan(self.osnr_db) or any(math.isnan(x) for x in self.osnr_points):
            raise ConfigError("OSNR values must be numbers or inf")
        return self

    @property
    def output(self):
        return self.output_path or DEFAULT_OUTPUT[self.mode]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float_list(text):
    parts = [p.strip() for p in text.strip().strip('"').split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def _opt_str(text):
    return text.strip().strip('"') or None


PARSERS = {
    "mode": lambda t: t.strip(),
    "format": lambda t: Format.parse(t),
    "osnr_points": _float_list,
    "num_symbols": int,
    "osnr_db": float,
    "num_buffers": int,
    "window_len": float,
    "buffer_len": int,
    "num_streams": int,
    "seed": int,
    "output_path": _opt_str,
    "quantize": _bool,
    "cspr_db": float,
    "lms_step": float,
    "prbs_order": int,
    "replay_path": _opt_str,
    "dump_path": _opt_str,
    "bench_buffers": int,
    "bench_repeats": int,
    "plot": _bool,
}


def parse_config_text(text, base=None):
    """Parse config text; returns an unvalidated :class:`ExperimentConfig`."""
    values = {}
    seen = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", no)
        try:
            values[key] = PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", no) from None
        seen[key] = no
    return replace(base or ExperimentConfig(), **values)


def parse_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(p.read_text())
