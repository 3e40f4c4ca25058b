"""Block FFT filtering shared by both receiver chains.

All filters here are overlap-save with a 100% overlap: every FFT window is
the previous ``block_len`` samples followed by ``block_len`` new ones, and
only the second half of the circular result is kept. For taps no longer
than ``block_len + 1`` the kept half equals the causal linear convolution,
so blocks can be processed independently and in parallel.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import kaiser


class OverlapSave:
    """Causal FIR filter ``y[n] = sum_k h[k] x[n-k]`` applied block-wise.

    Parameters
    ----------
    taps : array_like
        Filter taps, at most ``block_len + 1`` of them.
    block_len : int
        New samples per block; the FFT size is ``2 * block_len``.
    decimate : {1, 2}
        With 2, each block's spectrum is folded onto ``block_len`` bins before
        a half-size IFFT, which returns exactly every other output sample.
    """

    def __init__(self, taps, block_len=512, decimate=1):
        taps = np.asarray(taps)
        if len(taps) > block_len + 1:
            raise ValueError(f"{len(taps)} taps do not fit a {block_len}-sample overlap")
        if decimate not in (1, 2):
            raise ValueError("decimate must be 1 or 2")
        self.taps = taps
        self.block_len = block_len
        self.fft_len = 2 * block_len
        self.decimate = decimate
        self.real_taps = not np.iscomplexobj(taps)
        self.spectrum = np.fft.fft(taps, self.fft_len)
        self.rspectrum = np.fft.rfft(taps.real, self.fft_len) if self.real_taps else None

    def cold_tail(self, dtype=float):
        return np.zeros(self.block_len, dtype=dtype)

    def windows(self, x, tail):
        """(num_blocks, fft_len) view of consecutive overlapped windows."""
        B = self.block_len
        if len(x) % B:
            raise ValueError(f"input length {len(x)} is not a multiple of the block length {B}")
        ext = np.concatenate([tail, x])
        return sliding_window_view(ext, self.fft_len)[::B], ext[-B:]

    def process(self, x, tail=None):
        """Filter ``x`` given the last ``block_len`` samples before it.

        Returns the filtered samples (decimated if configured) and the tail to
        hand to the next call.
        """
        x = np.asarray(x)
        B = self.block_len
        if tail is None:
            tail = self.cold_tail(x.dtype)
        win, new_tail = self.windows(x, tail)
        if len(win) == 0:
            return np.zeros(0, dtype=np.result_type(x, self.taps)), new_tail
        if self.decimate == 1:
            if self.real_taps and not np.iscomplexobj(win):
                y = np.fft.irfft(np.fft.rfft(win, axis=1) * self.rspectrum, self.fft_len, axis=1)
            else:
                y = np.fft.ifft(np.fft.fft(win, axis=1) * self.spectrum, axis=1)
            return y[:, B:].ravel(), new_tail
        Y = np.fft.fft(win, axis=1) * self.spectrum
        folded = 0.5 * (Y[:, :B] + Y[:, B:])
        z = np.fft.ifft(folded, axis=1)
        return z[:, B // 2 :].ravel(), new_tail


def filter_stream(x, taps, block_len=512, decimate=1):
    """One-shot overlap-save over a whole array with a zero prehistory."""
    ols = OverlapSave(taps, block_len, decimate)
    x = np.asarray(x)
    pad = (-len(x)) % block_len
    xp = np.concatenate([x, np.zeros(pad, dtype=x.dtype)]) if pad else x
    y, _ = ols.process(xp)
    return y[: -(-len(x) // decimate)] if pad else y


def hilbert_fir(num_taps=513, beta=14.0):
    """Kaiser-windowed type-III Hilbert transformer (antisymmetric, zero at DC and Nyquist).

    The causal filter delays by ``(num_taps - 1) // 2`` samples.
    """
    if num_taps % 2 == 0:
        raise ValueError("Hilbert FIR needs an odd tap count")
    c = (num_taps - 1) // 2
    n = np.arange(num_taps) - c
    h = np.zeros(num_taps)
    odd = n % 2 != 0
    h[odd] = 2.0 / (np.pi * n[odd])
    return h * kaiser(num_taps, beta)


def freq_response(taps, f, fs, origin=0):
    """DTFT of ``taps`` at frequencies ``f``, with tap ``origin`` at time zero."""
    n = np.arange(len(taps)) - origin
    return np.exp(-2j * np.pi * np.outer(np.atleast_1d(f) / fs, n)) @ np.asarray(taps)


class DesignError(ValueError):
    pass


def design_zf_equalizer(pulse, origin, sps, num_taps, target, reg=1e-3, nulls=(), fs=1.0):
    """Least-squares zero-forcing equalizer for a known sampled system pulse.

    Minimises the symbol-spaced intersymbol interference of ``pulse * h``
    around output delay ``target`` (samples after the pulse's time zero at
    index ``origin``), plus ``reg`` times the tap energy relative to the pulse
    energy. Frequencies listed in ``nulls`` are forced to (near) zero gain.
    Real pulses give real taps.
    """
    p = np.asarray(pulse)
    real = not np.iscomplexobj(p)
    L = len(p) + num_taps - 1
    centre = origin + target
    if not 0 <= centre < L:
        raise DesignError("target delay outside the reachable cascade")
    rows = np.arange(centre % sps, L, sps)
    # A[r, j] = p[rows[r] - j]
    idx = rows[:, None] - np.arange(num_taps)[None, :]
    valid = (idx >= 0) & (idx < len(p))
    A = np.where(valid, p[np.clip(idx, 0, len(p) - 1)], 0)
    d = (rows == centre).astype(float)
    energy = float(np.sum(np.abs(p) ** 2))
    blocks = [A]
    rhs = [d]
    if len(nulls):
        weight = 1e3 * np.sqrt(energy)
        blocks.append(weight * np.exp(-2j * np.pi * np.outer(np.asarray(nulls) / fs, np.arange(num_taps))))
        rhs.append(np.zeros(len(nulls)))
    M = np.vstack(blocks).astype(complex)
    b = np.concatenate(rhs).astype(complex)
    if real:
        M = np.vstack([M.real, M.imag])
        b = np.concatenate([b.real, b.imag])
    gram = M.conj().T @ M + reg * energy * np.eye(num_taps)
    h = np.linalg.solve(gram, M.conj().T @ b)
    g = np.convolve(p, h)
    if not np.isfinite(h).all() or abs(g[centre]) < 0.5:
        raise DesignError("system response is not invertible in band")
    return h.real if real else h


def symbol_isi(pulse, h, origin, target, sps):
    """Peak symbol-spaced ISI of ``pulse * h`` relative to the main tap."""
    g = np.convolve(pulse, h)
    centre = origin + target
    s = g[centre % sps :: sps]
    k = centre // sps
    main = abs(s[k])
    return float(np.max(np.abs(np.delete(s, k))) / main)
