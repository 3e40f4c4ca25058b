"""Transmit waveform synthesis: RRC-shaped PAM and QAM with the KK carrier tone."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import oaconvolve

from .signal import Format, RrcSpec, Waveform, constellation, map_symbols, rrc_taps


@dataclass(frozen=True)
class TxConfig:
    """Transmitter parameters.

    ``mod_index`` is the intensity modulation depth used for PAM: the peak
    constellation level maps to ``1 + mod_index`` times the mean optical power.
    ``timing_offset`` delays every symbol by a fraction of a UI.
    """

    format: Format
    symbol_rate: float
    rolloff: float
    dac_rate: float = 12e9
    tone_freq: float | None = None
    cspr_db: float | None = None
    num_symbols: int = 1 << 20
    span_symbols: int = 32
    mod_index: float = 0.7
    timing_offset: float = 0.0

    def __post_init__(self):
        if isinstance(self.format, str):
            object.__setattr__(self, "format", Format.parse(self.format))
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError(f"roll-off must lie in [0, 1], got {self.rolloff}")
        if self.dac_rate < 2 * self.symbol_rate * (1 + self.rolloff):
            raise ValueError(
                f"DAC rate {self.dac_rate:g} Hz below 2*Rs*(1+beta) = "
                f"{2 * self.symbol_rate * (1 + self.rolloff):g} Hz"
            )
        ratio = self.dac_rate / self.symbol_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("DAC rate must be an integer multiple of the symbol rate")
        if not self.format.is_pam:
            if self.tone_freq is None or self.cspr_db is None:
                raise ValueError("QAM formats need tone_freq and cspr_db for KK detection")
            edge = self.symbol_rate * (1 + self.rolloff) / 2
            if not self.tone_freq > edge:
                raise ValueError(
                    f"tone at {self.tone_freq:g} Hz lies inside the signal band (edge {edge:g} Hz)"
                )
        elif not 0.0 < self.mod_index <= 1.0:
            raise ValueError(f"mod_index must lie in (0, 1], got {self.mod_index}")

    @classmethod
    def preset(cls, fmt, **overrides):
        """Defaults matching the experiment: 2 GBd PAM (beta 0.5), 1 GBd KK-QAM (beta 0.01)."""
        fmt = Format.parse(fmt) if isinstance(fmt, str) else fmt
        if fmt.is_pam:
            kw = dict(format=fmt, symbol_rate=2e9, rolloff=0.5)
        else:
            cspr = {Format.QPSK: 6.0, Format.QAM16: 11.0}[fmt]
            # the 0.01 roll-off needs a long pulse to keep its skirts out of the tone's gap
            kw = dict(format=fmt, symbol_rate=1e9, rolloff=0.01, tone_freq=0.547e9, cspr_db=cspr, span_symbols=512)
        kw.update(overrides)
        return cls(**kw)

    @property
    def sps(self):
        return int(round(self.dac_rate / self.symbol_rate))

    @property
    def constellation(self):
        return constellation(self.format)

    @property
    def rrc(self):
        return RrcSpec.spanning(self.rolloff, self.symbol_rate, self.sps, self.span_symbols)

    @property
    def tone_amplitude(self):
        # nominal signal power is 1 by construction of shape_baseband
        return math.sqrt(10 ** (self.cspr_db / 10)) if self.cspr_db is not None else 0.0

    @property
    def optical_power(self):
        """Mean optical field power |E|^2 of the modulated carrier."""
        if self.format.is_pam:
            return 1.0
        return 1.0 + self.tone_amplitude**2


def pulse(cfg):
    """Transmit pulse at the DAC rate, scaled so unit-power symbols give unit-power output."""
    return rrc_taps(cfg.rrc, delay=cfg.timing_offset) * math.sqrt(cfg.sps)


def _shape(symbols, first_symbol, cfg, start, stop, h=None):
    """Samples [start, stop) of the shaped stream whose symbol k sits at sample k*sps."""
    sps = cfg.sps
    h = pulse(cfg) if h is None else h
    half = (len(h) - 1) // 2
    n = stop - start
    dtype = float if cfg.constellation.is_real else complex
    if n <= 0:
        return np.zeros(0, dtype=dtype)
    # symbols contributing to the window
    k0 = max(first_symbol, -(-(start - half) // sps))
    k1 = min(first_symbol + len(symbols), (stop - 1 + half) // sps + 1)
    if k1 <= k0:
        return np.zeros(n, dtype=dtype)
    up = np.zeros((k1 - k0) * sps, dtype=dtype)
    up[::sps] = symbols[k0 - first_symbol : k1 - first_symbol]
    y = oaconvolve(up, h) if len(up) > 1 else up[0] * h
    # y[j] sits at absolute sample k0*sps - half + j
    origin = k0 * sps - half
    out = np.zeros(n, dtype=dtype)
    a = max(start, origin)
    b = min(stop, origin + len(y))
    if b > a:
        out[a - start : b - start] = y[a - origin : b - origin]
    return out


def shape_baseband(symbols, cfg):
    """Upsample to the DAC rate and RRC filter; symbol k centred on sample k*sps."""
    symbols = np.asarray(symbols)
    c = cfg.constellation
    if c.is_real and np.iscomplexobj(symbols) and np.any(symbols.imag != 0):
        raise ValueError("PAM symbols must be real")
    if c.is_real:
        symbols = np.real(symbols)
    n = len(symbols) * cfg.sps
    y = _shape(symbols, 0, cfg, 0, n)
    return Waveform(y, cfg.dac_rate, 0, real=c.is_real)


def tone(cfg, start, n):
    """exp(i*2*pi*f*t) on absolute sample indices, phase computed modulo one cycle."""
    idx = start + np.arange(n, dtype=np.int64)
    cyc = np.mod(idx * (cfg.tone_freq / cfg.dac_rate), 1.0)
    return np.exp(2j * np.pi * cyc)


def add_kk_tone(signal, cfg, signal_power=1.0):
    """Add the carrier tone so tone power / signal power equals the configured CSPR.

    The reference signal power defaults to the nominal unit power produced by
    :func:`shape_baseband`.
    """
    if cfg.tone_freq is None or cfg.cspr_db is None:
        raise ValueError("config has no KK tone")
    edge = cfg.symbol_rate * (1 + cfg.rolloff) / 2
    if not cfg.tone_freq > edge:
        raise ValueError(f"tone at {cfg.tone_freq:g} Hz is inside the signal band")
    amp = math.sqrt(10 ** (cfg.cspr_db / 10) * signal_power)
    out = signal.samples.astype(complex) + amp * tone(cfg, signal.start_index, len(signal))
    return Waveform(out, signal.sample_rate, signal.start_index, real=False)


def tx_waveform(cfg, bits):
    """bits -> Gray symbols -> RRC pulse shaping -> (QAM only) KK tone."""
    symbols = map_symbols(np.asarray(bits), cfg.constellation)
    wf = shape_baseband(symbols, cfg)
    if not cfg.format.is_pam:
        wf = add_kk_tone(wf, cfg)
    return wf


def modulate_optical(wf, cfg):
    """Optical field envelope from the electrical drive.

    PAM drives the intensity linearly around the bias point,
    I = 1 + m*s/max|level|; QAM drives the field directly.
    """
    if not cfg.format.is_pam:
        return Waveform(wf.samples, wf.sample_rate, wf.start_index, real=False)
    peak = np.max(np.abs(cfg.constellation.points.real))
    intensity = 1.0 + cfg.mod_index * wf.samples / peak
    field = np.sqrt(np.maximum(intensity, 0.0))
    return Waveform(field.astype(complex), wf.sample_rate, wf.start_index, real=False)


class SymbolSource:
    """Endless symbol stream cut from a periodic bit pattern."""

    def __init__(self, bits, c):
        self.c = c
        self.bits = np.asarray(bits, dtype=np.uint8)
        b = c.bits_per_symbol
        # one full period of symbols: lcm(len(bits), b) bits
        reps = b // math.gcd(len(self.bits), b)
        self.period_bits = np.tile(self.bits, reps)
        self.symbols = map_symbols(self.period_bits, c)

    def get(self, k0, k1):
        idx = np.arange(k0, k1) % len(self.symbols)
        return self.symbols[idx]

    def reference_bits(self):
        return self.bits


def tx_segment(cfg, source, start, stop):
    """Optical field samples [start, stop) at the DAC rate for the stream from ``source``.

    Symbols exist for indices >= 0 only; before that the modulator idles at
    its bias point. ``start`` may be negative.
    """
    h = pulse(cfg)
    half = (len(h) - 1) // 2
    sps = cfg.sps
    k0 = max(0, -(-(start - half) // sps))
    k1 = max(k0, (stop - 1 + half) // sps + 1)
    y = _shape(source.get(k0, k1), k0, cfg, start, stop, h)
    if cfg.format.is_pam:
        peak = np.max(np.abs(cfg.constellation.points.real))
        return np.sqrt(np.maximum(1.0 + cfg.mod_index * y / peak, 0.0)).astype(complex)
    return y + cfg.tone_amplitude * tone(cfg, start, stop - start)
