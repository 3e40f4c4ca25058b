"""Direct-detection PAM receiver.

Stages: overlap-save static equalizer, blockwise spectral-correlation clock
phase estimate, cross-buffer unwrap, per-block FD clock correction, then
gain/offset normalization, threshold decision and Gray demapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockfilter import OverlapSave, design_zf_equalizer
from .pipeline import Chain, Stage
from .signal import Format, constellation, decide, demap_symbols

#: input samples per clock-correction window kept in front of each block
CORR_HISTORY = 512
#: fixed latency of the clock-correction stage, in samples
CORR_LATENCY = 256


@dataclass(frozen=True)
class PamChainConfig:
    format: Format = Format.PAM4
    block_len: int = 512
    eq_taps: int = 503
    sps: int = 2
    clock_est_block: int = 1024
    sample_rate: float = 4e9
    reg: float = 1e-3

    def __post_init__(self):
        if isinstance(self.format, str):
            object.__setattr__(self, "format", Format.parse(self.format))
        if not self.format.is_pam:
            raise ValueError(f"{self.format.value} is not a PAM format")
        if self.eq_taps > self.block_len:
            raise ValueError(f"{self.eq_taps} equalizer taps exceed the block length {self.block_len}")
        if self.sps != 2:
            raise ValueError("the clock estimator works at 2 samples per symbol")
        if (self.clock_est_block * self.sps) % self.block_len:
            raise ValueError("clock block must be a whole number of filter blocks")

    @property
    def fft_len(self):
        return 2 * self.block_len

    @property
    def clock_block_samples(self):
        return self.clock_est_block * self.sps

    @property
    def constellation(self):
        return constellation(self.format)


# ---------------------------------------------------------------- equalizer


def default_target(pulse, origin, num_taps, sps):
    """Output delay that centres the equalizer on the pulse peak, on the symbol grid."""
    peak = int(np.argmax(np.abs(pulse))) - origin
    return sps * int(round((peak + (num_taps - 1) / 2) / sps))


def design_static_equalizer(cfg, system_response, target=None):
    """503 real taps that zero-force the sampled system pulse.

    Parameters
    ----------
    cfg : PamChainConfig
    system_response : tuple
        ``(pulse, origin)`` at the ADC rate, as from
        :func:`sdrx.channel.received_pulse`.
    target : int, optional
        Delay (samples) from the symbol's nominal time to its equalized
        peak; must be a multiple of ``sps`` so symbols land on even samples.

    Raises
    ------
    DesignError
        If the response cannot be inverted in band.
    """
    p, origin = system_response
    p = np.real_if_close(np.asarray(p))
    if np.iscomplexobj(p):
        raise ValueError("PAM system response must be real")
    if target is None:
        target = default_target(p, origin, cfg.eq_taps, cfg.sps)
    if target % cfg.sps:
        raise ValueError("target delay must be a multiple of sps")
    return design_zf_equalizer(p, origin, cfg.sps, cfg.eq_taps, target, reg=cfg.reg)


def overlap_save_block_filter(x, tail, taps, cfg):
    """Equalize one buffer given the previous ``block_len`` samples (zeros at cold start)."""
    ols = OverlapSave(taps, cfg.block_len)
    return ols.process(np.asarray(x, dtype=float), tail)


# ---------------------------------------------------------------- clock


def clock_phase_estimate(block):
    """Timing phase in UI of a 2-sps block, in [-0.5, 0.5).

    Correlates each spectral bin with the bin one symbol rate above it.
    A waveform delayed by ``tau`` UI yields ``tau``. Returns ``(tau, ok)``;
    ``ok`` is False for a degenerate (all-zero) block.
    """
    x = np.asarray(block, dtype=float)
    x = x - x.mean()
    n = len(x)
    X = np.fft.fft(x)
    acc = np.sum(X[: n // 2] * np.conj(X[n // 2 :]))
    if abs(acc) <= 1e-12 * max(1.0, float(np.sum(np.abs(X) ** 2))):
        return 0.0, False
    tau = -np.angle(acc) / (2 * np.pi)
    return _wrap(tau), True


def _wrap(tau):
    return float((tau + 0.5) % 1.0 - 0.5)


def clock_phase_estimates(y, cfg):
    """Raw estimates for consecutive clock blocks of ``y``."""
    n = cfg.clock_block_samples
    blocks = np.asarray(y, dtype=float).reshape(-1, n)
    blocks = blocks - blocks.mean(axis=1, keepdims=True)
    X = np.fft.fft(blocks, axis=1)
    acc = np.sum(X[:, : n // 2] * np.conj(X[:, n // 2 :]), axis=1)
    tau = -np.angle(acc) / (2 * np.pi)
    return (tau + 0.5) % 1.0 - 0.5


def clock_phase_unwrap(raw, anchor=None):
    """Shift each estimate by whole UIs to lie within 0.5 UI of its predecessor.

    The first estimate is unwrapped against ``anchor``; ``None`` (cold start)
    takes it as is. Returns ``(unwrapped, new_anchor)``.
    """
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    prev = anchor
    for i, r in enumerate(raw):
        v = r if prev is None else r + np.round(prev - r)
        out[i] = v
        prev = v
    return out, (prev if len(raw) else anchor)


def fd_clock_correct(y, phases, cfg, history=None):
    """Resample each clock block onto the symbol grid and take symbol centres.

    ``y`` holds ``CORR_HISTORY`` samples of history followed by whole clock
    blocks; ``phases`` (UI) gives one unwrapped estimate per block. Output
    symbol ``m`` of block ``j`` is the input at
    ``j*N - CORR_LATENCY + 2*m + 2*tau_j`` relative to the block start.
    An integer part of the shift is an index offset; the fraction is an FD
    phase ramp on the block's own transform.
    """
    y = np.asarray(y, dtype=float)
    if history is not None:
        y = np.concatenate([history, y])
    N = cfg.clock_block_samples
    H = CORR_HISTORY
    nb = (len(y) - H) // N
    if nb != len(phases):
        raise ValueError(f"{nb} clock blocks but {len(phases)} phase estimates")
    W = H + N
    f = np.fft.fftfreq(W)
    out = np.empty(nb * cfg.clock_est_block)
    per = cfg.clock_est_block
    for j, tau in enumerate(phases):
        d = cfg.sps * tau
        k = int(np.floor(d + 0.5))
        frac = d - k
        if abs(k) > H - CORR_LATENCY - 32 or abs(k) > CORR_LATENCY - 32:
            raise ValueError(f"clock offset {tau:.2f} UI exceeds the correction window")
        w = y[j * N : j * N + W]
        if frac != 0.0:
            mu = w.mean()
            w = np.fft.ifft(np.fft.fft(w - mu) * np.exp(2j * np.pi * f * frac)).real + mu
        start = H - CORR_LATENCY + k
        out[j * per : (j + 1) * per] = w[start : start + N : cfg.sps]
    return out


# ---------------------------------------------------------------- decisions


def normalize_blocks(z, block):
    """Remove the mean and scale to unit power, block by block."""
    z = np.asarray(z, dtype=float).reshape(-1, block)
    z = z - z.mean(axis=1, keepdims=True)
    p = np.sqrt(np.mean(z**2, axis=1, keepdims=True))
    p[p == 0] = 1.0
    return (z / p).ravel()


def pam_decide_demap(symbols, c, block=None):
    """Normalize (per ``block`` symbols, or the whole input) and demap to bits."""
    s = np.asarray(symbols, dtype=float)
    s = normalize_blocks(s, block or len(s)) if len(s) else s
    return demap_symbols(s, c)


# ---------------------------------------------------------------- chain


def pam_chain(cfg: PamChainConfig, taps):
    """Pipeline stages for the PAM receiver.

    The only sequential stages are the raw-sample handoff (two blocks of
    history, so the equalized history the clock correction needs can be
    recomputed locally) and the clock unwrap.
    """
    B = cfg.block_len
    N = cfg.clock_block_samples
    ols = OverlapSave(taps, B)
    c = cfg.constellation
    hist = 2 * B

    def overlap(item, tail):
        x = item["buffer"].values()
        if len(x) % N:
            raise ValueError(f"buffer length {len(x)} is not a multiple of the clock block {N}")
        item["ext"] = np.concatenate([tail, x])
        return item, x[-hist:].copy()

    def equalize(item):
        ext = item.pop("ext")
        y, _ = ols.process(ext[B:], ext[:B])
        item["eq"] = y  # CORR_HISTORY samples of history, then the buffer
        item["raw_phase"] = clock_phase_estimates(y[CORR_HISTORY:], cfg)
        return item

    def unwrap(item, anchor):
        ph, anchor = clock_phase_unwrap(item["raw_phase"], anchor)
        item["phase"] = ph
        return item, anchor

    def correct(item):
        z = fd_clock_correct(item.pop("eq"), item["phase"], cfg)
        item["symbols"] = z
        item["bits"] = demap_symbols(normalize_blocks(z, cfg.clock_est_block), c)
        item["seq"] = item["buffer"].seq
        item["warmup"] = item["seq"] == 0
        del item["buffer"]
        return item

    return Chain(
        name="pam",
        overlap_len=hist,
        stages=[
            Stage("overlap", overlap, sequential=True, cold=lambda: np.zeros(hist)),
            Stage("equalize", equalize),
            Stage("clock_unwrap", unwrap, sequential=True, cold=lambda: None),
            Stage("clock_correct", correct),
        ],
    )
