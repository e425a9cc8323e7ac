import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import comb_db, comb_depth_db
from pinna_n1.notch import (
    ExtractionError,
    ExtractionParams,
    Hrir,
    Spectrum,
    extract_n1,
    find_n1,
    find_p1,
    magnitude_spectrum,
    make_window,
    window_around_peak,
)
from pinna_n1.synth import comb_hrir

FS = 48000.0
RECT = ExtractionParams(window_kind="rectangular")


def impulse(at, n=256):
    x = np.zeros(n)
    x[at] = 1.0
    return Hrir(x, FS)


def comb_spectrum(gain, tau_samples, fft_size=4096):
    freqs = np.arange(fft_size // 2 + 1) * FS / fft_size
    return Spectrum(comb_db(freqs, gain, tau_samples / FS), FS / fft_size)


class TestHrir:
    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ExtractionError):
            Hrir(np.ones(10), 0.0)

    def test_samples_read_only(self):
        h = impulse(3)
        with pytest.raises(ValueError):
            h.samples[0] = 1.0

    def test_equality_by_content(self):
        assert impulse(5) == impulse(5)
        assert impulse(5) != impulse(6)


class TestParams:
    def test_defaults(self):
        p = ExtractionParams()
        assert (p.window_length_ms, p.window_kind, p.fft_size, p.prominence_db, p.search_max_hz) == (
            2.0, "blackman_harris_4term", 4096, 5.0, 16000.0)
        assert p.window_samples(FS) == 96

    def test_round_trip(self):
        p = ExtractionParams(window_kind="hann", fft_size=8192, p1_tie_db=0.0)
        assert ExtractionParams.from_dict(p.to_dict()) == p

    @pytest.mark.parametrize("kw", [dict(fft_size=1000), dict(window_kind="kaiser"), dict(window_length_ms=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExtractionParams(**kw)

    def test_search_above_nyquist(self):
        with pytest.raises(ExtractionError):
            ExtractionParams().check_rate(16000.0)

    def test_fft_shorter_than_window(self):
        with pytest.raises(ExtractionError):
            ExtractionParams(fft_size=64).check_rate(FS)


class TestWindow:
    def test_impulse_centred(self):
        seg = window_around_peak(impulse(100), RECT)
        assert seg.shape == (96,)
        assert np.flatnonzero(seg).tolist() == [48]

    def test_left_zero_padding(self):
        x = np.full(256, 0.5)
        x[10] = 2.0
        seg = window_around_peak(Hrir(x, FS), RECT)
        assert np.all(seg[:38] == 0.0)
        assert seg[38] == 0.5 and seg[48] == 2.0

    def test_right_zero_padding(self):
        x = np.full(256, 0.5)
        x[250] = 2.0
        seg = window_around_peak(Hrir(x, FS), RECT)
        # window spans 202..297; samples 256.. are padding
        assert np.all(seg[54:] == 0.0) and seg[53] == 0.5

    def test_comb_taps_inside(self):
        h = comb_hrir(8000.0, 0.9)
        seg = window_around_peak(h, RECT)
        assert np.flatnonzero(seg).tolist() == [48, 51]
        assert seg[51] == pytest.approx(0.9, rel=1e-6)

    def test_all_zero(self):
        with pytest.raises(ExtractionError):
            window_around_peak(Hrir(np.zeros(256), FS), RECT)

    def test_too_short(self):
        with pytest.raises(ExtractionError):
            window_around_peak(Hrir(np.ones(150), FS), RECT)

    def test_window_kinds(self):
        assert np.all(make_window("rectangular", 8) == 1)
        bh = make_window("blackman_harris_4term", 97)
        assert bh[48] == pytest.approx(1.0) and bh[0] < 1e-4


class TestSpectrum:
    def test_impulse_flat(self):
        s = magnitude_spectrum(np.eye(1, 96, 10)[0], 4096, FS)
        assert s.magnitude_db.shape == (2049,)
        assert np.ptp(s.magnitude_db) < 1e-9
        assert s.bin_hz == pytest.approx(FS / 4096)

    def test_comb_closed_form(self):
        w = np.zeros(96)
        w[0], w[5] = 1.0, 0.7
        s = magnitude_spectrum(w, 4096, FS)
        np.testing.assert_allclose(s.magnitude_db, comb_db(s.freqs, 0.7, 5 / FS), atol=1e-9)

    def test_cosine_single_bin(self):
        n = 4096
        k0 = 300
        w = np.cos(2 * np.pi * k0 * np.arange(n) / n)
        s = magnitude_spectrum(w, n, FS)
        assert int(np.argmax(s.magnitude_db)) == k0
        others = np.delete(s.magnitude_db, k0)
        assert s.magnitude_db[k0] - others.max() > 200

    def test_zero_guard(self):
        s = magnitude_spectrum(np.zeros(8), 16, FS)
        assert np.all(s.magnitude_db == pytest.approx(-240.0))

    def test_bad_fft_size(self):
        with pytest.raises(ValueError):
            magnitude_spectrum(np.ones(96), 64, FS)


class TestFindP1:
    def test_comb_boundary(self):
        s = comb_spectrum(0.9, 3)
        # maxima of the comb are at multiples of 16 kHz; DC is excluded, so
        # the strict rule lands on the bin just below 16 kHz
        f, _ = find_p1(s, 16000.0)
        assert f == pytest.approx(1365 * s.bin_hz)
        # below 16 kHz the spectrum falls from DC, so the lowest bin wins
        f, _ = find_p1(s, 14000.0)
        assert f == pytest.approx(s.bin_hz)

    def test_tie_rule_prefers_low_peak(self):
        s = comb_spectrum(0.9, 3)
        f, _ = find_p1(s, 16000.0, tie_db=0.5)
        assert f == pytest.approx(s.bin_hz)

    def test_flat(self):
        s = Spectrum(np.zeros(2049), FS / 4096)
        assert find_p1(s)[0] == pytest.approx(s.bin_hz)

    def test_injected_peak(self):
        bin_hz = FS / 4096
        mag = np.zeros(2049)
        k = int(round(4000 / bin_hz))
        mag[k] = 12.0
        f, lv = find_p1(Spectrum(mag, bin_hz))
        assert f == pytest.approx(k * bin_hz) and lv == 12.0

    def test_exact_4khz_bin(self):
        mag = np.zeros(1025)
        mag[100] = 3.0
        assert find_p1(Spectrum(mag, 40.0)) == (4000.0, 3.0)

    def test_dc_excluded(self):
        mag = np.zeros(2049)
        mag[0] = 100.0
        mag[50] = 1.0
        assert find_p1(Spectrum(mag, FS / 4096))[1] == 1.0


class TestFindN1:
    def test_comb_8k(self):
        s = comb_spectrum(0.9, 3)
        p1 = find_p1(s, 16000.0, 0.5)
        f = find_n1(s, p1, ExtractionParams())
        assert f.prominent
        assert abs(f.n1_hz - 8000.0) <= 25.0
        assert abs(f.n1_hz - 8000.0) <= s.bin_hz
        assert f.n1_depth_db == pytest.approx(comb_depth_db(0.9), abs=0.05)

    def test_monotone_decreasing(self):
        s = Spectrum(-np.linspace(0, 40, 2049), FS / 4096)
        f = find_n1(s, find_p1(s), ExtractionParams())
        assert not f.prominent and f.n1_hz is None and f.n1_depth_db == 0

    def test_shallow_comb(self):
        s = comb_spectrum(0.05, 3)
        f = find_n1(s, find_p1(s, 16000.0, 0.5), ExtractionParams(prominence_db=5.0))
        assert comb_depth_db(0.05) == pytest.approx(0.869, abs=1e-3)
        assert not f.prominent

    def test_lowest_frequency_wins_over_deepest(self):
        bin_hz = 10.0
        mag = np.zeros(1601)
        mag[300] = -10.0   # first qualifying notch
        mag[600] = -40.0   # deeper, higher
        f = find_n1(Spectrum(mag, bin_hz), (5.0 * bin_hz, 0.0), ExtractionParams())
        assert f.n1_hz == pytest.approx(3000.0)

    def test_shallow_first_minimum_skipped(self):
        mag = np.zeros(1601)
        mag[300] = -2.0
        mag[600] = -9.0
        f = find_n1(Spectrum(mag, 10.0), (10.0, 0.0), ExtractionParams())
        assert f.n1_hz == pytest.approx(6000.0)
        assert f.n1_depth_db == pytest.approx(9.0)

    def test_only_above_p1(self):
        mag = np.zeros(1601)
        mag[300] = -20.0
        mag[500] = 5.0
        f = find_n1(Spectrum(mag, 10.0), (5000.0, 5.0), ExtractionParams())
        assert not f.prominent

    def test_minimum_beyond_search_max_ignored(self):
        mag = np.zeros(2001)
        mag[1700] = -30.0
        f = find_n1(Spectrum(mag, 10.0), (10.0, 0.0), ExtractionParams())
        assert not f.prominent

    def test_parabolic_refinement_exact_for_parabola(self):
        k = np.arange(1601, dtype=float)
        mag = np.minimum(0.01 * (k - 500.3) ** 2 - 20.0, 0.0)
        f = find_n1(Spectrum(mag, 10.0), (10.0, 0.0), ExtractionParams())
        assert f.n1_hz == pytest.approx(5003.0, abs=1e-6)
        assert f.n1_db == pytest.approx(-20.0, abs=1e-9)


class TestExtract:
    def test_impulse_not_prominent(self):
        f = extract_n1(impulse(64))
        assert not f.prominent

    @pytest.mark.parametrize("n1", [6000.0, 7000.0, 8000.0, 9500.0, 11000.0])
    def test_comb_targets(self, n1):
        f = extract_n1(comb_hrir(n1, 0.9))
        assert f.prominent and abs(f.n1_hz - n1) <= 25.0
        assert f.n1_hz > f.p1_hz

    @settings(max_examples=40, deadline=None)
    @given(n1=st.floats(5500, 11500), gain=st.floats(0.5, 0.95), c=st.floats(1e-3, 1e3))
    def test_scale_invariance(self, n1, gain, c):
        h = comb_hrir(n1, gain)
        a = extract_n1(h)
        b = extract_n1(Hrir(np.asarray(h.samples, dtype=np.float64) * c, FS))
        assert a.prominent == b.prominent
        assert b.n1_hz == pytest.approx(a.n1_hz, abs=1e-6)
        assert b.n1_depth_db == pytest.approx(a.n1_depth_db, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(n1=st.floats(5500, 11500), gain=st.floats(0.5, 0.95), d=st.integers(-40, 60))
    def test_shift_invariance(self, n1, gain, d):
        h = comb_hrir(n1, gain)
        x = np.roll(np.asarray(h.samples, dtype=np.float64), d)
        a, b = extract_n1(h), extract_n1(Hrir(x, FS))
        assert abs(a.n1_hz - b.n1_hz) <= FS / 4096

    @settings(max_examples=60, deadline=None)
    @given(n1=st.floats(5500, 11500), gain=st.floats(0.5, 0.95))
    def test_comb_oracle(self, n1, gain):
        f = extract_n1(comb_hrir(n1, gain))
        assert f.prominent
        assert abs(f.n1_hz - n1) <= 25.0
        assert f.n1_hz > f.p1_hz and f.n1_depth_db >= 0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_refinement_within_one_bin(self, seed):
        rng = np.random.default_rng(seed)
        mag = np.cumsum(rng.normal(size=2049))
        s = Spectrum(mag, FS / 4096)
        f = find_n1(s, (s.bin_hz, mag[1]), ExtractionParams(prominence_db=0.0))
        if f.prominent:
            k = f.n1_hz / s.bin_hz
            minima = [j for j in range(1, 2048) if mag[j] < mag[j - 1] and mag[j] < mag[j + 1]]
            assert min(abs(k - j) for j in minima) <= 1.0
