"""End-to-end runs: back-to-back sweeps, continuous streaming and benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import AdcConfig, ChannelConfig, LinkSimulator, received_pulse
from .metrics import SyncError, align_and_count, crossing, error_mask, q_from_ber, q_timeseries
from .pipeline import (
    PipelineConfig,
    PipelineFault,
    RunResult,
    StageClock,
    iter_pipeline,
    run_pipeline,
    throughput_report,
)
from .rx_kk import KkChainConfig, design_kk_equalizer, kk_chain, resolve_phase_ambiguity, rotation_tables
from .rx_pam import PamChainConfig, design_static_equalizer, pam_chain
from .signal import prbs_period
from .tx import TxConfig

#: symbols excluded at the start of a KK run while the LMS converges
KK_CONVERGENCE = 10_000


@dataclass(frozen=True)
class Link:
    """Everything needed to simulate and receive one configuration."""

    tx: TxConfig
    channel: ChannelConfig = ChannelConfig()
    adc: AdcConfig = AdcConfig()
    prbs_order: int = 15
    lms_step: float = 1e-3

    @classmethod
    def preset(cls, fmt, osnr_db=math.inf, seed=0, buffer_len=65536, quantize=True, **tx_overrides):
        tx = TxConfig.preset(fmt, **tx_overrides)
        return cls(tx, ChannelConfig(osnr_db=osnr_db, seed=seed), AdcConfig(buffer_len=buffer_len, quantize=quantize))

    def with_osnr(self, osnr_db):
        return replace(self, channel=replace(self.channel, osnr_db=osnr_db))

    @property
    def reference(self):
        return prbs_period(self.prbs_order)

    @property
    def format(self):
        return self.tx.format

    def simulator(self):
        return LinkSimulator(self.tx, self.channel, self.adc, self.reference)

    @property
    def symbols_per_buffer(self):
        return int(round(self.adc.buffer_len * self.tx.symbol_rate / self.adc.sample_rate))

    def receiver(self):
        pulse = received_pulse(self.tx, self.adc)
        if self.format.is_pam:
            cfg = PamChainConfig(format=self.format, sample_rate=self.adc.sample_rate)
            return pam_chain(cfg, design_static_equalizer(cfg, pulse))
        cfg = KkChainConfig(
            format=self.format, tone_freq=self.tx.tone_freq, sample_rate=self.adc.sample_rate, lms_step=self.lms_step
        )
        return kk_chain(cfg, design_kk_equalizer(cfg, pulse))

    def skip_symbols(self):
        """Symbols left out of error counting: the warmup buffer, and for KK the LMS convergence window."""
        skip = int(self.symbols_per_buffer)
        if not self.format.is_pam:
            skip = max(skip, KK_CONVERGENCE)
        return skip

    def buffers_for(self, num_symbols):
        return int(math.ceil((num_symbols + self.skip_symbols()) / self.symbols_per_buffer))


@dataclass
class Measurement:
    bits: int
    errors: int
    offset: int = 0
    rotation: int = 0
    mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else math.nan

    @property
    def q_db(self):
        if self.errors == 0:
            return q_from_ber(1.0 / self.bits)
        return q_from_ber(self.ber)


def stream_bits(items, link):
    """Concatenated decided bits after the excluded start-up symbols."""
    bps = link.tx.constellation.bits_per_symbol
    bits = np.concatenate([it["bits"] for it in items]) if items else np.zeros(0, np.uint8)
    return bits[link.skip_symbols() * bps :]


def measure(items, link, keep_mask=False):
    """Align the decided bits with the PRBS and count errors (after phase resolution for QAM)."""
    bits = stream_bits(items, link)
    ref = link.reference
    c = link.tx.constellation
    if link.format.is_pam:
        res = align_and_count(bits, ref)
        rot = 0
    else:
        rot, res = resolve_phase_ambiguity(bits, ref, c)
        if rot:
            labels = rotation_tables(c)[rot][c.bits_label(bits)]
            bits = c.label_bits(labels).ravel()
    mask = error_mask(bits, ref, res.offset) if keep_mask else None
    return Measurement(res.bits, res.errors, res.offset, rot, mask)


def run_link(link, num_buffers, streams=5, receiver=None):
    chain = receiver or link.receiver()
    return run_pipeline(link.simulator().buffers(num_buffers), chain, PipelineConfig(num_streams=streams))


@dataclass
class SweepRow:
    format: str
    osnr_db: float
    bits: int
    errors: int
    status: str = "ok"

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else math.nan

    @property
    def q_is_bound(self):
        return self.status == "ok" and self.errors == 0

    @property
    def q_db(self):
        if self.status != "ok" or not self.bits:
            return math.nan
        return q_from_ber(1.0 / self.bits) if self.errors == 0 else q_from_ber(self.ber)


def run_b2b_sweep(link, osnr_points, num_symbols=1_000_000, streams=5):
    """One row per OSNR point; the same noise seed is reused at every point.

    Faults are recorded in the row's ``status`` and the sweep carries on.
    """
    rows = []
    chain = link.receiver()
    for osnr in osnr_points:
        lk = link.with_osnr(osnr)
        try:
            run = run_link(lk, lk.buffers_for(num_symbols), streams, chain)
            m = measure(run.items, lk)
            rows.append(SweepRow(link.format.value, osnr, m.bits, m.errors))
        except SyncError as exc:
            rows.append(SweepRow(link.format.value, osnr, 0, 0, f"sync_failed: {exc}"))
        except PipelineFault as exc:
            rows.append(SweepRow(link.format.value, osnr, 0, 0, f"fault: {exc}"))
    return rows


def required_osnr(rows, q_target=8.4):
    """OSNR where Q first reaches ``q_target`` (linear interpolation in dB)."""
    x = [r.osnr_db for r in rows if r.status == "ok" and math.isfinite(r.osnr_db)]
    y = [r.q_db for r in rows if r.status == "ok" and math.isfinite(r.osnr_db)]
    return crossing(x, y, q_target)


@dataclass
class StreamResult:
    records: list
    measurement: Measurement | None
    report: object
    fault: str | None = None
    buffers: int = 0


def run_stream(link, num_buffers, window_len, streams=5, buffers=None, dump_to=None):
    """Continuous run at fixed OSNR: windowed Q records plus the throughput report.

    ``buffers`` replaces the simulator (replay). With ``dump_to`` the
    captured buffers are also written to that file. A pipeline fault stops
    the run; the windows completed before it are still returned, with the
    fault text in ``fault``.
    """
    src = buffers if buffers is not None else link.simulator().buffers(num_buffers)
    dump = open(dump_to, "wb") if dump_to else None

    def tee(it):
        for b in it:
            if dump:
                dump.write(b.to_bytes())
            yield b

    clock = StageClock()
    items, fault = [], None
    counted = []

    def counting(it):
        for b in it:
            counted.append(len(b.samples))
            yield b

    t0 = time.perf_counter()
    try:
        for item in iter_pipeline(counting(tee(src)), link.receiver(), PipelineConfig(num_streams=streams), clock):
            items.append(item)
    except PipelineFault as exc:
        fault = str(exc)
    finally:
        if dump:
            dump.close()
    wall = time.perf_counter() - t0
    run = RunResult(items, len(items), sum(counted[: len(items)]), wall, link.adc.sample_rate,
                    dict(clock.totals), streams)
    records, m = [], None
    if len(items) > 1:
        try:
            m = measure(items, link, keep_mask=True)
        except SyncError as exc:
            fault = fault or f"sync failed: {exc}"
        else:
            bit_rate = link.tx.symbol_rate * link.tx.constellation.bits_per_symbol
            t_start = link.skip_symbols() / link.tx.symbol_rate
            records = q_timeseries(m.mask, bit_rate, window_len, t_start)
    return StreamResult(records, m, throughput_report(run), fault, len(items))


@dataclass
class BenchRow:
    chain: str
    streams: int
    buffers: int
    wall_time: float
    samples_per_s: float
    realtime_factor: float


def bench(fmt, num_buffers=16, streams=(1, 4), repeats=5, buffer_len=262144, seed=0):
    """Time the receiver alone on pre-captured buffers; best of ``repeats`` per stream count.

    Every buffer handoff costs a fixed few hundred microseconds of thread
    synchronization, so the default buffer is larger than the streaming
    default to keep that cost small next to the DSP work.
    """
    link = Link.preset(fmt, osnr_db=20.0, seed=seed, buffer_len=buffer_len)
    bufs = list(link.simulator().buffers(num_buffers))
    chain = link.receiver()
    run_pipeline(iter(bufs[:2]), chain, PipelineConfig(num_streams=1))  # compile and warm caches
    rows = []
    for s in streams:
        best = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            run = run_pipeline(iter(bufs), chain, PipelineConfig(num_streams=s))
            dt = time.perf_counter() - t0
            if best is None or dt < best[0]:
                best = (dt, run)
        rep = throughput_report(best[1])
        rows.append(BenchRow(link.format.value, s, num_buffers, rep.wall_time, rep.samples_per_s, rep.realtime_factor))
    return rows


@dataclass
class KkReconstruction:
    evm: float
    negative_residual_db: float
    violation_rate: float
    lag: int


def kk_reconstruction(link, num_buffers=4, skip=2048):
    """Noiseless KK field quality after the static equalizer.

    Runs the reconstruction over the concatenated capture, compares the
    symbol-centre samples with the transmitted symbols (after a best complex
    gain) and measures how much of the reconstructed analytic signal's
    power leaks into the mirror band.
    """
    from .blockfilter import OverlapSave, hilbert_fir
    from .rx_kk import kk_windows
    from .tx import SymbolSource, tone, tx_segment

    lk = replace(link, channel=replace(link.channel, osnr_db=math.inf), adc=replace(link.adc, quantize=False))
    cfg = KkChainConfig(format=lk.format, tone_freq=lk.tx.tone_freq, sample_rate=lk.adc.sample_rate)
    taps = design_kk_equalizer(cfg, received_pulse(lk.tx, lk.adc))
    B = cfg.block_len
    x = np.concatenate([b.physical() for b in lk.simulator().buffers(num_buffers)])
    ext = np.concatenate([np.zeros(2 * B), x])
    h_spec = np.fft.rfft(hilbert_fir(cfg.hilbert_taps), 2 * B)
    E = kk_windows(ext, -2 * B, cfg, h_spec)
    y, _ = OverlapSave(taps, B, decimate=2).process(E[B:], E[:B])
    centres = y[1::2]
    n = len(centres)
    ref = SymbolSource(lk.reference, lk.tx.constellation).get(0, n + 200)

    def fit(lag):
        r = centres[skip:n]
        s = ref[skip - lag : n - lag]
        g = np.vdot(r, s) / np.vdot(r, r)
        return float(np.sqrt(np.mean(np.abs(g * r - s) ** 2) / np.mean(np.abs(s) ** 2)))

    lags = range(0, 200)
    errs = [fit(k) for k in lags]
    lag = int(np.argmin(errs))

    # mirror-band leakage of the reconstructed field before the downshift
    u = np.conj(E[4 * B :]) * tone(replace(lk.tx, dac_rate=lk.adc.sample_rate), 0, len(E) - 4 * B)
    U = np.abs(np.fft.fft(u - u.mean())) ** 2
    f = np.fft.fftfreq(len(u), 1 / lk.adc.sample_rate)
    lo = lk.tx.tone_freq - lk.tx.symbol_rate * (1 + lk.tx.rolloff) / 2
    hi = lk.tx.tone_freq + lk.tx.symbol_rate * (1 + lk.tx.rolloff) / 2
    pos = U[(f >= lo) & (f <= hi)].sum()
    neg = U[(f <= -lo) & (f >= -hi)].sum()

    sig = tx_segment(replace(lk.tx, cspr_db=-300.0), SymbolSource(lk.reference, lk.tx.constellation), 0, 1 << 16)
    viol = float(np.mean(np.abs(sig) >= lk.tx.tone_amplitude))
    return KkReconstruction(errs[lag], 10 * math.log10(pos / neg), viol, lag)
