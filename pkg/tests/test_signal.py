import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrx.signal import (
    Format,
    PrbsSpec,
    RrcSpec,
    Waveform,
    constellation,
    convolve_direct,
    demap_symbols,
    map_symbols,
    prbs_bits,
    prbs_period,
    rrc_taps,
)

ALL = list(Format)


def lfsr_oracle(order, tap, n, seed):
    # plain shift-register model: output the oldest bit, feed back b[n-tap] ^ b[n-order]
    reg = [(seed >> i) & 1 for i in range(order)]
    out = []
    for _ in range(n):
        out.append(reg[0])
        reg.append(reg[order - tap] ^ reg[0])
        reg.pop(0)
    return np.array(out, dtype=np.uint8)


class TestPrbs:
    def test_first_bit_all_ones(self):
        assert prbs_bits(PrbsSpec(15, None, 1))[0] == 1

    def test_period(self):
        P = 32767
        b = prbs_bits(PrbsSpec(15, None, 3 * P))
        np.testing.assert_array_equal(b[:P], b[P : 2 * P])
        # maximal length: no proper divisor of 2**15 - 1 = 7 * 31 * 151 is a period
        for p in (7, 31, 151, 217, 1057, 4681):
            assert not np.array_equal(b[:P], b[p : p + P])

    def test_balance(self):
        b = prbs_period(15)
        assert b.sum() == 16384
        assert len(b) - b.sum() == 16383

    @pytest.mark.parametrize("order,tap", [(7, 6), (15, 14), (23, 18)])
    def test_matches_register_oracle(self, order, tap):
        seed = 0b1011 | 1 << (order - 1)
        n = 3000
        np.testing.assert_array_equal(prbs_bits(PrbsSpec(order, seed, n)), lfsr_oracle(order, tap, n, seed))

    def test_zero_seed_rejected(self):
        with pytest.raises(ValueError):
            PrbsSpec(15, 0, 10)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            PrbsSpec(9)


class TestMapping:
    def test_pam2(self):
        c = constellation(Format.PAM2)
        np.testing.assert_allclose(map_symbols([0, 1], c), [-1, 1])

    def test_pam4_gray(self):
        c = constellation(Format.PAM4)
        a = 1 / np.sqrt(5)
        s = map_symbols([0, 0, 0, 1, 1, 1, 1, 0], c)
        np.testing.assert_allclose(s, [-3 * a, -a, a, 3 * a])

    def test_qam16_grid(self):
        c = constellation(Format.QAM16)
        labels = np.arange(16)
        s = map_symbols(c.label_bits(labels).ravel(), c)
        assert len(np.unique(np.round(s, 9))) == 16
        assert np.mean(np.abs(s) ** 2) == pytest.approx(1.0, abs=1e-12)
        grid = np.array([x + 1j * y for x in (-3, -1, 1, 3) for y in (-3, -1, 1, 3)]) / np.sqrt(10)
        assert np.allclose(np.sort_complex(s), np.sort_complex(grid))

    @pytest.mark.parametrize("fmt", ALL)
    def test_unit_power_and_gray(self, fmt):
        c = constellation(fmt)
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-12)
        if c.is_real:
            assert np.all(c.points.imag == 0)
        d = np.abs(c.points[:, None] - c.points[None, :])
        dmin = d[d > 0].min()
        for i in range(c.order):
            for j in range(c.order):
                if i != j and abs(d[i, j] - dmin) < 1e-9:
                    assert bin(i ^ j).count("1") == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            map_symbols([0, 1, 1], constellation(Format.PAM4))

    def test_nearest_neighbour(self):
        np.testing.assert_array_equal(demap_symbols(np.array([0.99, -0.01]), constellation(Format.PAM2)), [1, 0])

    def test_qam16_small_perturbation(self, rng):
        c = constellation(Format.QAM16)
        bits = rng.integers(0, 2, 4 * 10_000)
        s = map_symbols(bits, c)
        half = 1 / np.sqrt(10)
        eps = rng.uniform(0, 0.99 * half / np.sqrt(2), len(s)) * np.exp(2j * np.pi * rng.random(len(s)))
        np.testing.assert_array_equal(demap_symbols(s + eps, c), bits)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from(ALL), st.data())
    def test_round_trip(self, fmt, data):
        c = constellation(fmt)
        n = data.draw(st.integers(0, 64)) * c.bits_per_symbol
        bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=np.uint8)
        np.testing.assert_array_equal(demap_symbols(map_symbols(bits, c), c), bits)


class TestRrc:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 1.0), st.sampled_from([2, 3, 4, 8]), st.integers(4, 40))
    def test_symmetric_unit_energy(self, beta, sps, span):
        h = rrc_taps(RrcSpec.spanning(beta, 1.0, sps, span))
        assert np.all(np.isfinite(h))
        np.testing.assert_allclose(h, h[::-1], atol=1e-14)
        assert np.sum(h**2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("beta", [0.25, 0.5, 1.0])
    def test_singular_points_are_limits(self, beta):
        # t = 1/(4 beta) hits a grid point at 4 sps for these roll-offs
        spec = RrcSpec(beta, 1.0, 4, 4 * 16 + 1)
        h = rrc_taps(spec)
        hn = rrc_taps(spec, delay=1e-7)
        np.testing.assert_allclose(h, hn, atol=1e-5)

    def test_matched_pair_is_nyquist(self):
        # truncation ISI falls with span; 512 symbols is the first power of two under 1e-6
        h = rrc_taps(RrcSpec.spanning(0.5, 1.0, 4, 512))
        g = np.convolve(h, h)
        c = len(g) // 2
        s = g[c % 4 :: 4]
        k = c // 4
        assert np.max(np.abs(np.delete(s, k))) <= 1e-6 * abs(s[k])

    def test_bad_rolloff(self):
        with pytest.raises(ValueError):
            RrcSpec(1.5, 1.0, 4, 33)

    def test_even_taps_rejected(self):
        with pytest.raises(ValueError):
            RrcSpec(0.5, 1.0, 4, 32)


class TestConvolveDirect:
    def test_identity(self, rng):
        x = rng.standard_normal(100)
        np.testing.assert_array_equal(convolve_direct(x, [1.0]), x)
        h = rng.standard_normal(7)
        np.testing.assert_array_equal(convolve_direct([1.0], h), h)

    def test_textbook_sum(self, rng):
        x = rng.standard_normal(4096)
        h = rng.standard_normal(503)
        y = convolve_direct(x, h)
        for n in rng.integers(0, len(y), 12):
            k = np.arange(max(0, n - 4095), min(n, 502) + 1)
            assert y[n] == pytest.approx(np.sum(h[k] * x[n - k]), rel=1e-12, abs=1e-12)

    def test_waveform(self):
        w = convolve_direct(Waveform(np.ones(4), 4e9, 8), np.ones(2))
        assert w.start_index == 8 and w.real
        np.testing.assert_array_equal(w.samples, [1, 2, 2, 2, 1])


class TestWaveform:
    def test_real_flag_checked(self):
        with pytest.raises(ValueError):
            Waveform(np.array([1 + 1j]), 1.0, real=True)

    def test_real_inferred(self):
        assert Waveform(np.array([1.0 + 0j]), 1.0, real=True).real
        assert not Waveform(np.array([1j]), 1.0).real

    @pytest.mark.parametrize("kw", [dict(sample_rate=0.0), dict(sample_rate=1.0, start_index=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Waveform(np.zeros(3), **kw)

    def test_format_parse(self):
        assert Format.parse("16-QAM") is Format.QAM16
        assert Format.parse("pam4") is Format.PAM4
        with pytest.raises(ValueError):
            Format.parse("OOK")
