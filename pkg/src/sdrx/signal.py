"""Core signal types, constellations, PRBS data and pulse-shaping filters."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np


@dataclass
class Waveform:
    """Uniformly sampled signal.

    Parameters
    ----------
    samples : np.ndarray
        Signal samples. Real waveforms are stored as float arrays.
    sample_rate : float
        Sampling rate in Hz.
    start_index : int
        Offset of the first sample from the stream origin, in samples.
    real : bool, optional
        Purity flag. Inferred from the dtype when omitted; when set, the
        imaginary part of ``samples`` must be exactly zero.
    orthogonal : np.ndarray, optional
        Field in the orthogonal polarization. Only unpolarized ASE noise ever
        lives here; the signal itself is single-polarization.
    """

    samples: np.ndarray
    sample_rate: float
    start_index: int = 0
    real: bool | None = None
    orthogonal: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.start_index < 0:
            raise ValueError(f"start_index must be >= 0, got {self.start_index}")
        x = np.asarray(self.samples)
        if self.real is None:
            self.real = not np.iscomplexobj(x)
        if self.real:
            if np.iscomplexobj(x):
                if np.any(x.imag != 0):
                    raise ValueError("waveform flagged real has nonzero imaginary part")
                x = x.real
            x = x.astype(np.float64, copy=False)
        else:
            x = x.astype(np.complex128, copy=False)
        self.samples = x
        if self.orthogonal is not None:
            self.orthogonal = np.asarray(self.orthogonal, dtype=np.complex128)
            if self.orthogonal.shape != x.shape:
                raise ValueError("orthogonal component must match samples in shape")

    def __len__(self):
        return len(self.samples)

    @property
    def t(self):
        """Absolute sample times in seconds."""
        return (self.start_index + np.arange(len(self.samples))) / self.sample_rate

    def power(self):
        return float(np.mean(np.abs(self.samples) ** 2)) if len(self.samples) else 0.0


class Format(enum.Enum):
    PAM2 = "PAM2"
    PAM4 = "PAM4"
    PAM8 = "PAM8"
    QPSK = "QPSK"
    QAM16 = "QAM16"

    @property
    def is_pam(self):
        return self.name.startswith("PAM")

    @classmethod
    def parse(cls, text):
        key = text.strip().upper().replace("-", "").replace("_", "")
        aliases = {"2PAM": "PAM2", "4PAM": "PAM4", "8PAM": "PAM8", "16QAM": "QAM16", "4QAM": "QPSK"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown modulation format {text!r}") from None


def _gray(n):
    return n ^ (n >> 1)


def _pam_levels(order):
    # levels[g] is the amplitude carrying Gray label g
    lv = np.arange(-(order - 1), order, 2, dtype=float)
    out = np.empty(order)
    for i in range(order):
        out[_gray(i)] = lv[i]
    return out


@dataclass(frozen=True, eq=False)
class Constellation:
    """Gray-labelled constellation with unit average power.

    ``points[label]`` is the symbol for the integer label whose binary
    expansion (MSB first) is the bit tuple carried by that symbol.
    """

    format: Format
    points: np.ndarray
    bits_per_symbol: int

    @property
    def order(self):
        return len(self.points)

    @property
    def is_real(self):
        return self.format.is_pam

    def label_bits(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((labels[:, None] >> shifts) & 1).astype(np.uint8)

    def bits_label(self, bits):
        b = np.asarray(bits, dtype=np.int64).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return b @ weights

    def levels(self):
        """Sorted real amplitudes per dimension (PAM levels, or I/Q rail levels)."""
        return np.unique(np.round(self.points.real, 12))


@lru_cache(maxsize=None)
def constellation(fmt):
    fmt = Format.parse(fmt) if isinstance(fmt, str) else fmt
    if fmt.is_pam:
        order = {Format.PAM2: 2, Format.PAM4: 4, Format.PAM8: 8}[fmt]
        pts = _pam_levels(order).astype(complex)
        bps = order.bit_length() - 1
    else:
        rail = {Format.QPSK: 2, Format.QAM16: 4}[fmt]
        lv = _pam_levels(rail)
        half = rail.bit_length() - 1
        labels = np.arange(rail * rail)
        pts = lv[labels >> half] + 1j * lv[labels & (rail - 1)]
        bps = 2 * half
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return Constellation(fmt, pts, bps)


# ---------------------------------------------------------------- PRBS

PRBS_TAPS = {7: 6, 15: 14, 23: 18, 31: 28}


@dataclass(frozen=True)
class PrbsSpec:
    order: int = 15
    seed: int | None = None
    length: int = 0

    def __post_init__(self):
        if self.order not in PRBS_TAPS:
            raise ValueError(f"PRBS order must be one of {sorted(PRBS_TAPS)}, got {self.order}")
        if self.seed is not None and not 0 < self.seed < (1 << self.order):
            raise ValueError(f"PRBS seed must be a nonzero {self.order}-bit state, got {self.seed}")
        if self.length < 0:
            raise ValueError("PRBS length must be nonnegative")

    @property
    def period(self):
        return (1 << self.order) - 1

    @property
    def state(self):
        return self.seed if self.seed is not None else self.period


@numba.njit(cache=True)
def _lfsr(init, order, tap, n):
    out = np.empty(n, dtype=np.uint8)
    m = min(order, n)
    out[:m] = init[:m]
    for i in range(order, n):
        out[i] = out[i - tap] ^ out[i - order]
    return out


def prbs_bits(spec):
    """Maximal-length sequence b[n] = b[n - tap] xor b[n - order].

    The first ``order`` output bits are the seed bits, LSB first.
    """
    init = np.array([(spec.state >> i) & 1 for i in range(spec.order)], dtype=np.uint8)
    return _lfsr(init, spec.order, PRBS_TAPS[spec.order], spec.length)


def prbs_period(order=15, seed=None):
    spec = PrbsSpec(order, seed)
    return prbs_bits(PrbsSpec(order, seed, spec.period))


# ---------------------------------------------------------------- mapping


def map_symbols(bits, c):
    bits = np.asarray(bits)
    if bits.size % c.bits_per_symbol:
        raise ValueError(
            f"{bits.size} bits is not a multiple of {c.bits_per_symbol} bits/symbol for {c.format.value}"
        )
    if bits.size == 0:
        return np.zeros(0, dtype=float if c.is_real else complex)
    sym = c.points[c.bits_label(bits)]
    return sym.real.copy() if c.is_real else sym


def decide(symbols, c):
    """Index of the nearest constellation point for each symbol."""
    y = np.asarray(symbols)
    if c.is_real:
        lv = np.sort(c.points.real)
        order = np.argsort(c.points.real)
        k = np.searchsorted((lv[1:] + lv[:-1]) / 2, np.real(y))
        return order[k]
    rail = c.levels()
    thr = (rail[1:] + rail[:-1]) / 2
    ki = np.searchsorted(thr, y.real)
    kq = np.searchsorted(thr, y.imag)
    return _rail_table(c.format)[ki, kq]


@lru_cache(maxsize=None)
def _rail_table(fmt):
    c = constellation(fmt)
    rail = c.levels()
    table = np.empty((len(rail), len(rail)), dtype=np.int64)
    for label, p in enumerate(c.points):
        table[np.argmin(np.abs(rail - p.real)), np.argmin(np.abs(rail - p.imag))] = label
    return table


def demap_symbols(symbols, c):
    if len(symbols) == 0:
        return np.zeros(0, dtype=np.uint8)
    return c.label_bits(decide(symbols, c)).ravel()


# ---------------------------------------------------------------- filters


@dataclass(frozen=True)
class RrcSpec:
    rolloff: float
    symbol_rate: float
    samples_per_symbol: int
    num_taps: int

    def __post_init__(self):
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError(f"roll-off must lie in [0, 1], got {self.rolloff}")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if self.num_taps < 1 or self.num_taps % 2 == 0:
            raise ValueError(f"num_taps must be a positive odd integer, got {self.num_taps}")

    @classmethod
    def spanning(cls, rolloff, symbol_rate, sps, span_symbols=32):
        n = span_symbols * sps
        return cls(rolloff, symbol_rate, sps, n + 1 - n % 2)


def rrc_taps(spec, delay=0.0):
    """Unit-energy root-raised-cosine impulse response.

    ``delay`` shifts the pulse by a fraction of a symbol (in UI); the default
    gives the symmetric linear-phase filter centred on the middle tap.
    """
    b = spec.rolloff
    c = (spec.num_taps - 1) / 2
    t = (np.arange(spec.num_taps) - c) / spec.samples_per_symbol - delay
    h = np.empty_like(t)
    at0 = np.isclose(t, 0.0, atol=1e-12)
    h[at0] = 1.0 - b + 4 * b / np.pi
    sing = np.zeros_like(at0)
    if b > 0:
        sing = np.isclose(np.abs(t), 1 / (4 * b), atol=1e-12) & ~at0
    if sing.any():
        h[sing] = b / np.sqrt(2) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
        )
    rest = ~(at0 | sing)
    tr = t[rest]
    h[rest] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    return h / np.sqrt(np.sum(h**2))


def convolve_direct(x, h):
    """Full linear convolution in the time domain; the reference for block filters."""
    if isinstance(x, Waveform):
        y = np.convolve(x.samples, np.asarray(h))
        return Waveform(y, x.sample_rate, x.start_index, real=x.real and not np.iscomplexobj(h))
    return np.convolve(np.asarray(x), np.asarray(h))
