"""BER counting against a periodic reference, BER-derived Q and windowed Q series."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv


class SyncError(ValueError):
    """Received bits do not correlate with the reference above chance."""


SYNC_THRESHOLD = 0.25


@dataclass(frozen=True)
class AlignResult:
    offset: int
    errors: int
    bits: int
    peak: float

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else math.nan


def align_and_count(received, reference, window=4096, threshold=SYNC_THRESHOLD):
    """Locate ``received`` inside the periodic ``reference`` and count errors.

    The offset ``o`` maximizes the correlation of the first ``window`` bits
    against one reference period (circularly, via FFT), so that
    ``received[i]`` is compared with ``reference[(i + o) % period]``.

    Raises
    ------
    SyncError
        If the normalized correlation peak stays below ``threshold``.
    """
    r = np.asarray(received, dtype=np.int8)
    ref = np.asarray(reference, dtype=np.int8)
    P = len(ref)
    n = len(r)
    if n == 0 or P == 0:
        raise SyncError("nothing to align")
    W = min(window, n)
    a = 1.0 - 2.0 * r[:W]
    folded = np.bincount(np.arange(W) % P, weights=a, minlength=P)
    b = 1.0 - 2.0 * ref
    corr = np.fft.irfft(np.conj(np.fft.rfft(folded)) * np.fft.rfft(b), P)
    o = int(np.argmax(corr))
    peak = float(corr[o] / W)
    if peak < threshold:
        raise SyncError(f"sync failed: correlation peak {peak:.3f} below {threshold}")
    expected = ref[(np.arange(n) + o) % P]
    errors = int(np.count_nonzero(r != expected))
    return AlignResult(o, errors, n, peak)


def error_mask(received, reference, offset):
    r = np.asarray(received, dtype=np.int8)
    ref = np.asarray(reference, dtype=np.int8)
    return r != ref[(np.arange(len(r)) + offset) % len(ref)]


def q_from_ber(ber):
    """Gaussian Q in dB: 20 log10(sqrt(2) erfcinv(2 ber)).

    ``ber == 0`` gives ``inf`` and ``ber >= 0.5`` gives ``nan``; see
    :func:`q_record` for the lower-bound sentinel on zero-error counts.
    """
    ber = np.asarray(ber, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = 20 * np.log10(np.sqrt(2) * erfcinv(2 * ber))
    q = np.where(ber <= 0, np.inf, np.where(ber >= 0.5, np.nan, q))
    return float(q) if q.ndim == 0 else q


def ber_from_q(q_db):
    return 0.5 * erfc(10 ** (np.asarray(q_db) / 20) / np.sqrt(2))


@dataclass(frozen=True)
class QRecord:
    """BER and Q over one window of stream time.

    When no errors were counted ``q_db`` holds the lower bound
    ``q_from_ber(1 / bits)`` and ``q_is_bound`` is set.
    """

    window_start: float
    window_len: float
    bits_counted: int
    bit_errors: int

    def __post_init__(self):
        if self.bits_counted <= 0:
            raise ValueError("bits_counted must be positive")

    @property
    def ber(self):
        return self.bit_errors / self.bits_counted

    @property
    def q_is_bound(self):
        return self.bit_errors == 0

    @property
    def q_db(self):
        if self.bit_errors == 0:
            return q_from_ber(1.0 / self.bits_counted)
        return q_from_ber(self.ber)

    def q_text(self):
        q = self.q_db
        if math.isnan(q):
            return "nan"
        return f">{q:.3f}" if self.q_is_bound else f"{q:.3f}"


def q_record(bits, errors, start=0.0, length=0.0):
    return QRecord(start, length, bits, errors)


def q_timeseries(errors, bit_rate, window_len=21e-3, t0=0.0):
    """Split a per-bit error mask into consecutive windows of ``window_len`` seconds.

    The trailing partial window is dropped.
    """
    if not window_len > 0:
        raise ValueError("window_len must be positive")
    e = np.asarray(errors, dtype=bool)
    per = int(round(window_len * bit_rate))
    if per <= 0:
        raise ValueError("window shorter than one bit")
    nw = len(e) // per
    counts = e[: nw * per].reshape(nw, per).sum(axis=1) if nw else np.zeros(0, dtype=int)
    return [QRecord(t0 + i * per / bit_rate, per / bit_rate, per, int(c)) for i, c in enumerate(counts)]


def q_spread(records):
    """Standard deviation of window Q (dB) over records with finite, non-bound Q."""
    q = np.array([r.q_db for r in records if not r.q_is_bound and math.isfinite(r.q_db)])
    return float(np.std(q)) if len(q) > 1 else 0.0


def crossing(x, y, level):
    """First x where piecewise-linear y(x) reaches ``level`` from below; nan if never."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    for i in range(len(x) - 1):
        if y[i] < level <= y[i + 1]:
            return float(x[i] + (level - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    if len(y) and y[0] >= level:
        return float(x[0])
    return math.nan
