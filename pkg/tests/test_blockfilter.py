import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_rms
from sdrx.blockfilter import (
    DesignError,
    OverlapSave,
    design_zf_equalizer,
    filter_stream,
    freq_response,
    hilbert_fir,
    symbol_isi,
)
from sdrx.signal import convolve_direct


def test_impulse_is_identity(rng):
    x = rng.standard_normal(2048)
    y, _ = OverlapSave([1.0]).process(x)
    np.testing.assert_allclose(y, x, atol=1e-13)


@pytest.mark.parametrize("ntaps,cplx", [(503, False), (203, True), (1, False), (513, False)])
def test_matches_direct_convolution(rng, ntaps, cplx):
    h = rng.standard_normal(ntaps) + (1j * rng.standard_normal(ntaps) if cplx else 0)
    x = rng.standard_normal(8 * 512) + (1j * rng.standard_normal(8 * 512) if cplx else 0)
    y = filter_stream(x, h)
    ref = convolve_direct(x, h)[: len(x)]
    assert rel_rms(y, ref) < 1e-12


def test_fold_decimation_keeps_even_outputs(rng):
    h = rng.standard_normal(203) + 1j * rng.standard_normal(203)
    x = rng.standard_normal(8 * 512) + 1j * rng.standard_normal(8 * 512)
    y = filter_stream(x, h, decimate=2)
    ref = convolve_direct(x, h)[: len(x) : 2]
    assert len(y) == len(x) // 2
    assert rel_rms(y, ref) < 1e-12


def test_impulse_fold_is_plain_decimation(rng):
    x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    y = filter_stream(x, [1.0 + 0j], decimate=2)
    np.testing.assert_allclose(y, x[::2], atol=1e-12)


def test_tone_passes_with_tap_response():
    fs = 4e9
    n = np.arange(8192)
    x = np.exp(2j * np.pi * 0.3e9 * n / fs)
    h = np.hanning(31) / np.hanning(31).sum() + 0j
    y = filter_stream(x, h, decimate=2)
    gain = freq_response(h, 0.3e9, fs)[0]
    ref = gain * x[::2]
    np.testing.assert_allclose(y[64:], ref[64:], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 513), st.lists(st.integers(1, 6), min_size=1, max_size=5), st.integers(0, 2**31))
def test_seam_invisible(ntaps, chunks, seed):
    r = np.random.default_rng(seed)
    h = r.standard_normal(ntaps)
    x = r.standard_normal(512 * sum(chunks))
    ols = OverlapSave(h)
    whole, _ = ols.process(x)
    tail, parts, pos = None, [], 0
    for c in chunks:
        y, tail = ols.process(x[pos : pos + 512 * c], tail)
        parts.append(y)
        pos += 512 * c
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_too_many_taps():
    with pytest.raises(ValueError):
        OverlapSave(np.ones(600))


def test_block_multiple_required():
    with pytest.raises(ValueError):
        OverlapSave([1.0]).process(np.ones(700))


class TestHilbert:
    def test_antisymmetric_type3(self):
        h = hilbert_fir()
        np.testing.assert_allclose(h, -h[::-1], atol=0)
        assert abs(freq_response(h, 0.0, 1.0)[0]) < 1e-12
        assert abs(freq_response(h, 0.5, 1.0)[0]) < 1e-12

    @pytest.mark.parametrize("f", [0.05, 0.137, 0.25, 0.4])
    def test_cos_to_sin(self, f):
        h = hilbert_fir()
        n = np.arange(8192)
        y = filter_stream(np.cos(2 * np.pi * f * n), h)
        d = (len(h) - 1) // 2
        ref = np.sin(2 * np.pi * f * (n - d))
        assert np.max(np.abs(y[1024:] - ref[1024:])) < 1e-6

    def test_constant_maps_to_zero(self):
        y = filter_stream(np.full(4096, 3.0), hilbert_fir())
        assert np.max(np.abs(y[1024:])) < 1e-12


class TestZfDesign:
    def test_flat_channel_is_near_identity(self):
        p = np.zeros(33)
        p[16] = 1.0
        h = design_zf_equalizer(p, 16, 2, 21, target=10, reg=1e-6)
        assert h[10] == pytest.approx(1.0, abs=1e-3)
        assert symbol_isi(p, h, 16, 10, 2) < 1e-3

    def test_real_in_real_out(self, rng):
        p = np.exp(-0.5 * (np.arange(-20, 21) / 3.0) ** 2)
        h = design_zf_equalizer(p, 20, 2, 41, target=20)
        assert not np.iscomplexobj(h)

    def test_spectral_null_raises(self):
        # a pulse whose symbol-rate samples cancel completely
        p = np.zeros(41)
        p[18], p[22] = 1.0, -1.0
        with pytest.raises(DesignError):
            design_zf_equalizer(p, 20, 2, 41, target=20, reg=1e3)

    def test_null_frequency_suppressed(self):
        p = np.exp(-0.5 * (np.arange(-20, 21) / 3.0) ** 2) + 0j
        h = design_zf_equalizer(p, 20, 4, 41, target=20, nulls=[0.137], fs=1.0)
        assert abs(freq_response(h, 0.137, 1.0)[0]) < 1e-3 * np.max(np.abs(np.fft.fft(h, 1024)))
