"""Optical link and receiver front end: ASE loading, optical filtering,
square-law detection and the streaming ADC that emits fixed-size buffers."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import firwin, upfirdn

from .blockfilter import freq_response
from .signal import Waveform
from .tx import SymbolSource, TxConfig, pulse, tx_segment

C_LIGHT = 299_792_458.0


def nm_to_hz(width_m, wavelength):
    return C_LIGHT * width_m / wavelength**2


@dataclass(frozen=True)
class ChannelConfig:
    """Back-to-back optical channel.

    ``osnr_db`` is referenced to 0.1 nm and may be ``inf``. ASE is
    unpolarized: half of the noise power falls in the signal polarization,
    half in the orthogonal one, and the photodiode sees both.
    """

    osnr_db: float = math.inf
    center_wavelength: float = 1542.92e-9
    bpf_width_nm: float = 0.04
    cd_ps_per_nm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.osnr_db) or self.osnr_db == -math.inf:
            raise ValueError(f"osnr_db must be finite or +inf, got {self.osnr_db}")
        if not self.bpf_width_nm > 0:
            raise ValueError("band-pass width must be positive")

    @property
    def bpf_bandwidth(self):
        return nm_to_hz(self.bpf_width_nm * 1e-9, self.center_wavelength)

    @property
    def ref_bandwidth(self):
        return nm_to_hz(0.1e-9, self.center_wavelength)


@dataclass(frozen=True)
class AdcConfig:
    """ADC and analog front end.

    ``analog_cutoff=None`` removes the photodiode bandwidth limit. With
    ``quantize=False`` buffers carry unquantized floats. ``full_scale=None``
    auto-ranges on the first captured frame.
    """

    sample_rate: float = 4e9
    bits: int = 12
    analog_cutoff: float | None = 1e9
    buffer_len: int = 65536
    full_scale: float | None = None
    quantize: bool = True
    block_len: int = 512

    def __post_init__(self):
        if not 4 <= self.bits <= 16:
            raise ValueError(f"bits must lie in [4, 16], got {self.bits}")
        if self.buffer_len <= 0 or self.buffer_len % self.block_len:
            raise ValueError(
                f"buffer_len {self.buffer_len} must be a positive multiple of {self.block_len}"
            )
        if self.full_scale is not None and not self.full_scale > 0:
            raise ValueError("full_scale must be positive")

    @property
    def code_min(self):
        return -(1 << (self.bits - 1))

    @property
    def code_max(self):
        return (1 << (self.bits - 1)) - 1

    @property
    def lsb(self):
        return self.full_scale / (1 << (self.bits - 1))


# ---------------------------------------------------------------- buffers

HEADER = struct.Struct("<4sHHdIQ4x")
MAGIC = b"SDRX"
VERSION = 1


@dataclass
class SampleBuffer:
    """One ADC capture: ``buffer_len`` codes (or floats when unquantized)."""

    samples: np.ndarray
    seq: int
    adc: AdcConfig

    def __post_init__(self):
        if len(self.samples) != self.adc.buffer_len:
            raise ValueError(f"buffer holds {len(self.samples)} samples, expected {self.adc.buffer_len}")
        if self.seq < 0:
            raise ValueError("seq must be nonnegative")
        if self.adc.quantize:
            s = np.asarray(self.samples)
            if s.dtype.kind not in "iu":
                raise ValueError("quantized buffers hold integer codes")
            if len(s) and (s.min() < self.adc.code_min or s.max() > self.adc.code_max):
                raise ValueError("code outside the ADC range")
            self.samples = s.astype(np.int16, copy=False)

    @property
    def start_time(self):
        return self.seq * self.adc.buffer_len / self.adc.sample_rate

    def values(self):
        """Samples as float64: codes in LSB units, or the raw floats when unquantized.

        Receivers are insensitive to the absolute scale, and LSB units make a
        replayed dump bit-identical to the live capture.
        """
        return np.asarray(self.samples, dtype=np.float64)

    def physical(self):
        """Samples in input units."""
        if self.adc.quantize:
            return self.samples.astype(np.float64) * self.adc.lsb
        return np.asarray(self.samples, dtype=np.float64)

    def to_bytes(self):
        if not self.adc.quantize:
            raise ValueError("only quantized buffers can be dumped")
        head = HEADER.pack(MAGIC, VERSION, self.adc.bits, self.adc.sample_rate, self.adc.buffer_len, self.seq)
        return head + self.samples.astype("<i2").tobytes()


def dump_buffers(path, buffers):
    """Write buffers back to back, each with its 32-byte header. Returns the count."""
    n = 0
    with open(path, "wb") as fh:
        for b in buffers:
            fh.write(b.to_bytes())
            n += 1
    return n


def load_buffers(path, full_scale=1.0, analog_cutoff=1e9):
    """Iterate over the buffers in a dump file.

    The header does not carry the full scale; ``full_scale`` only affects
    :meth:`SampleBuffer.physical`.
    """
    with open(path, "rb") as fh:
        while True:
            head = fh.read(HEADER.size)
            if not head:
                return
            if len(head) < HEADER.size:
                raise ValueError("truncated buffer header")
            magic, version, bits, rate, n, seq = HEADER.unpack(head)
            if magic != MAGIC:
                raise ValueError(f"bad magic {magic!r}")
            if version != VERSION:
                raise ValueError(f"unsupported dump version {version}")
            raw = fh.read(2 * n)
            if len(raw) < 2 * n:
                raise ValueError(f"truncated payload in buffer {seq}")
            adc = AdcConfig(rate, bits, analog_cutoff, n, full_scale, True)
            yield SampleBuffer(np.frombuffer(raw, dtype="<i2").astype(np.int16), seq, adc)


# ---------------------------------------------------------------- optics


def _freqs(n, fs):
    return np.fft.fftfreq(n, 1.0 / fs)


def osnr_noise_std(signal_power, cfg, sample_rate):
    """Total ASE standard deviation (both polarizations) over the simulation bandwidth."""
    if math.isinf(cfg.osnr_db):
        return 0.0
    var = signal_power / 10 ** (cfg.osnr_db / 10) * (sample_rate / cfg.ref_bandwidth)
    return math.sqrt(var)


def osnr_noise_load(x, cfg, signal_power=None, rng=None):
    """Add unpolarized ASE for the configured OSNR.

    Parameters
    ----------
    x : Waveform
        Complex field envelope.
    signal_power : float, optional
        Reference power; defaults to the measured power of ``x``, which for
        KK signals includes the tone.
    rng : numpy.random.Generator, optional
        Defaults to a generator seeded from ``cfg.seed``.
    """
    p = x.power() if signal_power is None else signal_power
    std = osnr_noise_std(p, cfg, x.sample_rate)
    orth = x.orthogonal
    if std == 0.0:
        return Waveform(x.samples.copy(), x.sample_rate, x.start_index, real=False,
                        orthogonal=None if orth is None else orth.copy())
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    w = rng.standard_normal((len(x), 4)) * (std / 2)
    co = x.samples + (w[:, 0] + 1j * w[:, 1])
    ort = w[:, 2] + 1j * w[:, 3]
    if orth is not None:
        ort = ort + orth
    return Waveform(co, x.sample_rate, x.start_index, real=False, orthogonal=ort)


def _fd_apply(x, mask):
    return np.fft.ifft(np.fft.fft(x) * mask)


def bpf_mask(n, fs, cfg):
    f = _freqs(n, fs)
    mask = (np.abs(f) <= cfg.bpf_bandwidth / 2).astype(complex)
    if cfg.cd_ps_per_nm:
        # beta2*L from D*L: phi(w) = beta2*L/2 * w^2
        dl = cfg.cd_ps_per_nm * 1e-3  # s/m
        b2l = -dl * cfg.center_wavelength**2 / (2 * math.pi * C_LIGHT)
        mask = mask * np.exp(0.5j * b2l * (2 * math.pi * f) ** 2)
    return mask


def optical_bpf(x, cfg):
    """Brick-wall optical band-pass of width ``cfg.bpf_bandwidth`` (plus optional CD)."""
    mask = bpf_mask(len(x), x.sample_rate, cfg)
    orth = None if x.orthogonal is None else _fd_apply(x.orthogonal, mask)
    return Waveform(_fd_apply(x.samples, mask), x.sample_rate, x.start_index, real=False, orthogonal=orth)


def photodiode_response(f, cutoff):
    """4th-order Butterworth magnitude, zero phase. ``cutoff=None`` is flat."""
    f = np.asarray(f, dtype=float)
    if cutoff is None:
        return np.ones_like(f)
    return 1.0 / np.sqrt(1.0 + (f / cutoff) ** 8)


def square_law(x):
    y = np.abs(x.samples) ** 2
    if x.orthogonal is not None:
        y = y + np.abs(x.orthogonal) ** 2
    return y


def photodiode(x, adc):
    """|E|^2 summed over polarizations, then the analog low-pass."""
    y = square_law(x)
    if adc.analog_cutoff is not None:
        mask = photodiode_response(_freqs(len(y), x.sample_rate), adc.analog_cutoff)
        y = np.fft.irfft(np.fft.rfft(y) * mask[: len(y) // 2 + 1], len(y))
    return Waveform(y, x.sample_rate, x.start_index, real=True)


# ---------------------------------------------------------------- ADC


def antialias_fir(ratio):
    """Anti-alias FIR for integer decimation; (len - 1) is a multiple of ``ratio``."""
    if ratio == 1:
        return np.ones(1)
    return firwin(48 * ratio + 1, 0.8 / ratio, window=("kaiser", 10.0))


def auto_full_scale(x):
    """Full scale at mean + 4 sigma of the (DC-coupled) input."""
    x = np.asarray(x, dtype=float)
    fs = float(np.mean(x) + 4 * np.std(x))
    return fs if fs > 0 else 1.0


class AdcCapture:
    """Streaming decimating ADC.

    Feed input chunks with :meth:`push`; complete buffers come back in order.
    Output depends only on the concatenated input, not on chunking. Output
    sample m is the anti-alias filter output at input sample ``ratio * m``,
    so the filter delay ``(len(fir) - 1) // 2`` input samples is kept.
    """

    def __init__(self, adc, input_rate):
        ratio = input_rate / adc.sample_rate
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("input rate must be an integer multiple of the ADC rate")
        self.adc = adc
        self.ratio = int(round(ratio))
        self.fir = antialias_fir(self.ratio)
        self.delay = (len(self.fir) - 1) // 2
        self.hist = np.zeros(len(self.fir) - 1)
        self.pending = np.zeros(0)
        self.buffered = []
        self.buffered_len = 0
        self.seq = 0

    def _decimate(self, x):
        r, L = self.ratio, len(self.fir)
        ext = np.concatenate([self.hist, x])
        usable = (len(ext) - (L - 1)) // r  # outputs with full history
        if usable <= 0:
            self.hist = ext
            return np.zeros(0)
        y = upfirdn(self.fir, ext[: (L - 1) + usable * r], 1, r)
        y = y[(L - 1) // r : (L - 1) // r + usable]
        self.hist = ext[usable * r :]
        return y

    def push(self, x):
        y = self._decimate(np.asarray(x, dtype=float))
        out = []
        if not len(y):
            return out
        adc = self.adc
        if adc.quantize and adc.full_scale is None:
            self.adc = adc = replace(adc, full_scale=auto_full_scale(y))
        self.buffered.append(y)
        self.buffered_len += len(y)
        n = adc.buffer_len
        if self.buffered_len < n:
            return out
        y = np.concatenate(self.buffered)
        k = len(y) // n
        for i in range(k):
            out.append(self._make(y[i * n : (i + 1) * n]))
        rest = y[k * n :]
        self.buffered = [rest] if len(rest) else []
        self.buffered_len = len(rest)
        return out

    def _make(self, y):
        adc = self.adc
        if adc.quantize:
            codes = np.clip(np.rint(y / adc.lsb), adc.code_min, adc.code_max).astype(np.int16)
            buf = SampleBuffer(codes, self.seq, adc)
        else:
            buf = SampleBuffer(y.copy(), self.seq, adc)
        self.seq += 1
        return buf


def adc_capture(x, adc):
    """Capture a whole waveform; the trailing partial buffer is discarded."""
    cap = AdcCapture(adc, x.sample_rate)
    return cap.push(x.samples)


def sqnr_db(x, codes, adc):
    err = codes * adc.lsb - x
    return 10 * math.log10(np.mean(x**2) / np.mean(err**2))


# ---------------------------------------------------------------- system response


def frontend_response(f, adc, input_rate):
    """Photodiode and anti-alias response seen at input frequency ``f`` (causal delay included)."""
    ratio = int(round(input_rate / adc.sample_rate))
    return photodiode_response(np.abs(f), adc.analog_cutoff) * freq_response(antialias_fir(ratio), f, input_rate)


def received_pulse(tx, adc, half_span=1024):
    """Sampled response to one unit symbol at the ADC rate.

    PAM returns the real electrical pulse. QAM returns the complex baseband
    field pulse seen after KK reconstruction, where the front end acts as
    ``H(f - tone_freq)``. Returns ``(pulse, origin)`` with the symbol's
    nominal time zero at index ``origin``; the anti-alias delay is included.
    """
    p = pulse(replace(tx, timing_offset=0.0))
    half = (len(p) - 1) // 2
    ratio = int(round(tx.dac_rate / adc.sample_rate))
    n = 1 << max(14, int(np.ceil(np.log2(2 * half_span * ratio + len(p)))) + 1)
    buf = np.zeros(n, dtype=complex)
    buf[: half + 1] = p[half:]
    buf[n - half :] = p[:half]
    f = _freqs(n, tx.dac_rate)
    shift = 0.0 if tx.format.is_pam else tx.tone_freq
    q = np.fft.ifft(np.fft.fft(buf) * frontend_response(f - shift, adc, tx.dac_rate))
    m = np.arange(-half_span, half_span + 1)
    r = q[(m * ratio) % n]
    if tx.format.is_pam:
        peak = np.max(np.abs(tx.constellation.points.real))
        return r.real * (tx.mod_index / peak), half_span
    return r, half_span


# ---------------------------------------------------------------- framed link


class LinkSimulator:
    """Transmitter, channel and front end driven frame by frame.

    Frames of the 12 GS/s stream are synthesized with a guard on either side
    so the circular FD filters see the true neighborhood; noise comes from
    fixed-size blocks with their own seeds, so every frame is reproducible
    in isolation and the output does not depend on how it is consumed.

    Parameters
    ----------
    tx, channel, adc : TxConfig, ChannelConfig, AdcConfig
    bits : np.ndarray
        Periodic reference bit pattern carried by the symbols.
    frame_len, guard : int
        Samples per frame and per guard, at the DAC rate.
    """

    noise_block = 1 << 16

    def __init__(self, tx: TxConfig, channel: ChannelConfig, adc: AdcConfig, bits,
                 frame_len=3 << 16, guard=3 << 12):
        ratio = tx.dac_rate / adc.sample_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("DAC rate must be an integer multiple of the ADC rate")
        if frame_len % int(round(ratio)):
            raise ValueError("frame length must be a multiple of the decimation ratio")
        self.tx, self.channel, self.adc = tx, channel, adc
        self.source = SymbolSource(bits, tx.constellation)
        self.frame_len, self.guard = frame_len, guard
        self.ratio = int(round(ratio))
        n = frame_len + 2 * guard
        self._bpf = bpf_mask(n, tx.dac_rate, channel)
        self._pd = photodiode_response(_freqs(n, tx.dac_rate), adc.analog_cutoff)[: n // 2 + 1]
        self.noise_std = osnr_noise_std(tx.optical_power, channel, tx.dac_rate)

    @property
    def symbols_per_buffer(self):
        return self.adc.buffer_len * self.ratio // self.tx.sps

    def _noise(self, start, stop):
        nb = self.noise_block
        out = np.empty((stop - start, 4))
        b0, b1 = start // nb, (stop - 1) // nb
        for b in range(b0, b1 + 1):
            blk = np.random.default_rng([self.channel.seed, b + (1 << 32)]).standard_normal((nb, 4))
            lo, hi = max(start, b * nb), min(stop, (b + 1) * nb)
            out[lo - start : hi - start] = blk[lo - b * nb : hi - b * nb]
        return out

    def frame(self, index):
        """Photodiode output for frame ``index`` at the DAC rate."""
        F, G = self.frame_len, self.guard
        a, b = index * F - G, (index + 1) * F + G
        field = tx_segment(self.tx, self.source, a, b)
        orth = None
        if self.noise_std > 0:
            w = self._noise(a, b) * (self.noise_std / 2)
            field = field + (w[:, 0] + 1j * w[:, 1])
            orth = w[:, 2] + 1j * w[:, 3]
        field = _fd_apply(field, self._bpf)
        y = np.abs(field) ** 2
        if orth is not None:
            y = y + np.abs(_fd_apply(orth, self._bpf)) ** 2
        if self.adc.analog_cutoff is not None:
            y = np.fft.irfft(np.fft.rfft(y) * self._pd, len(y))
        return y[G : G + F]

    def buffers(self, num_buffers):
        """Yield the first ``num_buffers`` ADC buffers (seq 0, 1, ...)."""
        cap = AdcCapture(self.adc, self.tx.dac_rate)
        emitted, f = 0, 0
        while emitted < num_buffers:
            for buf in cap.push(self.frame(f)):
                if emitted < num_buffers:
                    yield buf
                    emitted += 1
            f += 1
