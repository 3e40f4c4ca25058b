"""Kramers-Kronig receiver for QAM with a carrier tone above the signal band.

Per overlap-save window: clamp, sqrt and half-log of the intensity, a
Hilbert FIR for the phase, field reconstruction and frequency downshift.
Then the static FD equalizer with built-in decimation to 2 sps, and a
4-tap decision-directed LMS that runs strictly in symbol order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .blockfilter import OverlapSave, design_zf_equalizer, hilbert_fir
from .pipeline import Chain, Stage
from .signal import Format, constellation


class LmsDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class KkChainConfig:
    format: Format = Format.QPSK
    sps_in: int = 4
    block_len: int = 512
    hilbert_taps: int = 513
    eq_taps: int = 203
    lms_taps: int = 4
    lms_step: float = 1e-3
    tone_freq: float = 0.547e9
    sample_rate: float = 4e9
    clamp_floor: float = 1e-6
    reg: float = 1e-3
    diverge_window: int = 1024
    diverge_ratio: float = 10.0

    def __post_init__(self):
        if isinstance(self.format, str):
            object.__setattr__(self, "format", Format.parse(self.format))
        if self.format.is_pam:
            raise ValueError(f"{self.format.value} is not a QAM format")
        if self.eq_taps > self.block_len:
            raise ValueError("equalizer taps must fit in one block")
        if self.hilbert_taps > self.block_len + 1:
            raise ValueError("Hilbert FIR must fit in one block")
        if self.lms_taps < 1:
            raise ValueError("lms_taps must be >= 1")
        if not self.clamp_floor > 0:
            raise ValueError("clamp floor must be positive")

    @property
    def fft_len(self):
        return 2 * self.block_len

    @property
    def downsample_len(self):
        return self.block_len

    @property
    def hilbert_delay(self):
        return (self.hilbert_taps - 1) // 2

    @property
    def constellation(self):
        return constellation(self.format)


# ---------------------------------------------------------------- front end


def kk_frontend(intensity, eps=1e-6):
    """Clamp to ``eps * mean`` and return ``(sqrt(I), ln(I) / 2)``."""
    I = np.asarray(intensity, dtype=float)
    m = I.mean() if len(I) else 0.0
    if not m > 0:
        raise ValueError("no carrier: intensity has no positive mean")
    Ic = np.maximum(I, eps * m)
    return np.sqrt(Ic), 0.5 * np.log(Ic)


def fd_hilbert(x, cfg=None, tail=None):
    """Blockwise Hilbert transform (overlap-save), delayed by ``cfg.hilbert_delay`` samples."""
    cfg = cfg or KkChainConfig()
    ols = OverlapSave(hilbert_fir(cfg.hilbert_taps), cfg.block_len)
    y, _ = ols.process(np.asarray(x, dtype=float), tail)
    return y


def field_reconstruct_downshift(amp, phase, tone_freq, t0, fs):
    """E[n] = amp[n] exp(i phase[n]) exp(-i 2 pi f (t0 + n/fs)).

    ``t0`` may be given as an integer sample index (preferred, exact phase)
    or as seconds.
    """
    n = np.arange(len(amp))
    if isinstance(t0, (int, np.integer)):
        cyc = np.mod((int(t0) + n) * (tone_freq / fs), 1.0)
    else:
        cyc = np.mod(tone_freq * (t0 + n / fs), 1.0)
    return np.asarray(amp) * np.exp(1j * (np.asarray(phase) - 2 * np.pi * cyc))


def kk_windows(ext, start_index, cfg, h_spec):
    """Reconstructed baseband field for all but the first block of ``ext``.

    ``ext`` holds raw intensity; ``start_index`` is the global sample index
    of ``ext[0]``. Every 1024-sample window is clamped against its own mean,
    so the output depends only on the window contents. Output sample ``n``
    represents stream time ``n - hilbert_delay``; its conjugate is taken so
    the tone sits at ``+tone_freq`` and the signal at baseband.
    """
    B = cfg.block_len
    d = cfg.hilbert_delay
    nb = len(ext) // B - 1
    win = np.lib.stride_tricks.sliding_window_view(ext, 2 * B)[::B][:nb]
    mean = win.mean(axis=1, keepdims=True)
    live = mean[:, 0] > 0
    floor = np.where(mean > 0, cfg.clamp_floor * mean, 1.0)
    Ic = np.maximum(win, floor)
    hl = 0.5 * np.log(Ic)
    phase = np.fft.irfft(np.fft.rfft(hl, axis=1) * h_spec, 2 * B, axis=1)[:, B:]
    amp = np.sqrt(Ic[:, B - d : 2 * B - d])
    amp[~live] = 0.0
    n0 = start_index + B - d
    E = field_reconstruct_downshift(amp.ravel(), phase.ravel(), cfg.tone_freq, n0, cfg.sample_rate)
    return np.conj(E)


def design_kk_equalizer(cfg, system_response, target=None):
    """Complex static equalizer with a spectral null on the carrier tone.

    ``system_response`` is the baseband field pulse ``(pulse, origin)`` at
    the ADC rate. The default target puts symbol centres on odd samples of
    the decimated 2-sps stream, given the Hilbert delay.
    """
    p, origin = system_response
    if target is None:
        peak = int(np.argmax(np.abs(p))) - origin
        natural = peak + (cfg.eq_taps - 1) // 2
        # total delay (hilbert + target) must be 2 mod 4
        target = natural + ((2 - (cfg.hilbert_delay + natural)) % cfg.sps_in)
    return design_zf_equalizer(
        np.asarray(p, dtype=complex), origin, cfg.sps_in, cfg.eq_taps, target,
        reg=cfg.reg, nulls=[cfg.tone_freq], fs=cfg.sample_rate,
    )


def fd_equalize_downsample(E, taps, cfg, tail=None):
    """Overlap-save equalizer whose per-block spectrum is folded to 512 bins (2 sps out)."""
    ols = OverlapSave(np.asarray(taps, dtype=complex), cfg.block_len, decimate=2)
    y, _ = ols.process(np.asarray(E, dtype=complex), tail)
    return y


# ---------------------------------------------------------------- DD-LMS


#: symbol-centre window read by the cold start, after the filter warm-up
COLD_SKIP, COLD_END = 128, 512


@dataclass
class LmsState:
    taps: np.ndarray
    last_error: complex = 0j
    count: int = 0
    carry: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=complex))
    err_acc: float = 0.0
    err_n: int = 0
    scale: float = 1.0  # input gain fixed at cold start, so the step size is scale-free

    def copy(self):
        return LmsState(self.taps.copy(), self.last_error, self.count, self.carry.copy(), self.err_acc, self.err_n,
                        self.scale)


@numba.njit(nogil=True, cache=True)
def _dd_lms(z, w, mu, points, nsym, err_acc, err_n, window, limit):
    ntap = len(w)
    out = np.empty(nsym, dtype=np.complex128)
    labels = np.empty(nsym, dtype=np.int64)
    e = 0j
    for k in range(nsym):
        y = 0j
        for i in range(ntap):
            y += w[i] * z[2 * k + i]
        best = 0
        bd = np.inf
        for j in range(len(points)):
            dd = (y.real - points[j].real) ** 2 + (y.imag - points[j].imag) ** 2
            if dd < bd:
                bd = dd
                best = j
        e = points[best] - y
        for i in range(ntap):
            w[i] += mu * e * np.conj(z[2 * k + i])
        out[k] = y
        labels[k] = best
        err_acc += e.real * e.real + e.imag * e.imag
        err_n += 1
        if err_n == window:
            if err_acc / window > limit:
                return out, labels, e, err_acc, err_n, k + 1
            err_acc = 0.0
            err_n = 0
    return out, labels, e, err_acc, err_n, -1


def lms_cold_state(y, cfg):
    """Input scale from the measured RMS, centre-spike taps rotated by the 4th-power phase.

    Uses symbol centres (odd indices) 128 to 511. The smallest legal buffer
    (2048 ADC samples) yields exactly 512 centres, so the result does not
    depend on the buffer size.
    """
    centres = np.asarray(y)[1::2]
    skip = min(COLD_SKIP, len(centres) // 2)
    s = centres[skip:COLD_END]
    rms = float(np.sqrt(np.mean(np.abs(s) ** 2))) if len(s) else 1.0
    ref = np.mean(constellation(cfg.format).points ** 4)
    m4 = np.mean(s**4) if len(s) else ref
    theta = (np.angle(m4) - np.angle(ref)) / 4 if abs(m4) > 0 else 0.0
    taps = np.zeros(cfg.lms_taps, dtype=complex)
    taps[1 if cfg.lms_taps > 1 else 0] = np.exp(-1j * theta)
    return LmsState(taps, scale=1.0 / rms if rms > 0 else 1.0)


def dd_lms_equalize(y, state, cfg):
    """Run the T/2-spaced DD-LMS over one buffer.

    The input is first multiplied by ``state.scale``. The window for symbol
    ``k`` is then ``[carry, y][2k : 2k + lms_taps]`` so the centre tap
    (index 1) sees the odd samples of ``y``. Returns
    ``(symbols, labels, state')``.

    Raises
    ------
    LmsDiverged
        When the mean squared error over a window exceeds
        ``diverge_ratio`` times the constellation power.
    """
    y = np.asarray(y, dtype=complex)
    if state is None:
        state = lms_cold_state(y, cfg)
    st = state.copy()
    y = y * st.scale
    z = np.concatenate([st.carry, y])
    nsym = (len(z) - cfg.lms_taps) // 2 + 1
    nsym = min(nsym, len(y) // 2)
    pts = np.ascontiguousarray(constellation(cfg.format).points, dtype=np.complex128)
    out, labels, e, acc, n, bad = _dd_lms(
        z, st.taps, cfg.lms_step, pts, nsym, st.err_acc, st.err_n, cfg.diverge_window, cfg.diverge_ratio
    )
    if bad >= 0:
        raise LmsDiverged(f"LMS diverged near symbol {st.count + bad}")
    if not np.isfinite(st.taps).all():
        raise LmsDiverged("LMS taps are not finite")
    st.last_error, st.err_acc, st.err_n = complex(e), acc, n
    st.count += nsym
    st.carry = z[2 * nsym : 2 * nsym + 2].copy()
    return out, labels, st


# ---------------------------------------------------------------- ambiguity


def rotation_tables(c):
    """``tab[r][label]`` is the label of ``points[label] * 1j**r``."""
    pts = c.points
    tab = np.empty((4, len(pts)), dtype=np.int64)
    for r in range(4):
        rot = pts * (1j**r)
        tab[r] = np.argmin(np.abs(rot[:, None] - pts[None, :]), axis=1)
    return tab


def resolve_phase_ambiguity(bits, reference, c, window=4096):
    """Best of the four 90-degree rotations of the decided symbols.

    Returns ``(rotation, AlignResult)``; rotation ``r`` means the corrected
    decisions are the received ones multiplied by ``1j**r``.
    """
    from .metrics import SyncError, align_and_count

    labels = c.bits_label(np.asarray(bits)[: len(bits) - len(bits) % c.bits_per_symbol])
    tab = rotation_tables(c)
    best = None
    for r in range(4):
        b = c.label_bits(tab[r][labels]).ravel()
        try:
            res = align_and_count(b, reference, window)
        except SyncError:
            continue
        if best is None or res.errors < best[1].errors:
            best = (r, res)
    if best is None:
        raise SyncError("no rotation reached sync")
    return best


# ---------------------------------------------------------------- chain


def kk_chain(cfg: KkChainConfig, taps):
    """Pipeline stages: raw handoff (sequential), reconstruction and FD equalization
    (parallel), DD-LMS (sequential)."""
    B = cfg.block_len
    hist = 2 * B
    h_spec = np.fft.rfft(hilbert_fir(cfg.hilbert_taps), 2 * B)
    ols = OverlapSave(np.asarray(taps, dtype=complex), B, decimate=2)
    c = cfg.constellation

    def overlap(item, tail):
        x = item["buffer"].values()
        if len(x) % B:
            raise ValueError("buffer length must be a multiple of the block length")
        if not np.any(x > 0):
            raise ValueError("no carrier: buffer intensity is not positive anywhere")
        item["ext"] = np.concatenate([tail, x])
        return item, x[-hist:].copy()

    def reconstruct(item):
        buf = item["buffer"]
        ext = item.pop("ext")
        start = buf.seq * len(buf.samples) - hist
        E = kk_windows(ext, start, cfg, h_spec)  # buffer plus one block of history
        y, _ = ols.process(E[B:], E[:B])
        item["y"] = y
        return item

    def lms(item, state):
        y = item.pop("y")
        sym, labels, state = dd_lms_equalize(y, state, cfg)
        item["symbols"] = sym
        item["bits"] = c.label_bits(labels).ravel()
        item["seq"] = item["buffer"].seq
        item["warmup"] = item["seq"] == 0
        del item["buffer"]
        return item, state

    return Chain(
        name="kk",
        overlap_len=hist,
        stages=[
            Stage("overlap", overlap, sequential=True, cold=lambda: np.zeros(hist)),
            Stage("reconstruct", reconstruct),
            Stage("dd_lms", lms, sequential=True, cold=lambda: None),
        ],
    )


def evm(received, reference):
    """RMS error vector magnitude relative to the reference power (fraction, not %)."""
    r = np.asarray(received)
    s = np.asarray(reference)
    return math.sqrt(np.mean(np.abs(r - s) ** 2) / np.mean(np.abs(s) ** 2))


def min_phase_violation(signal, tone_amplitude):
    """Fraction of samples where |signal| reaches the carrier amplitude."""
    return float(np.mean(np.abs(signal) >= tone_amplitude))
