import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import noise, sine
from vcc import toy
from vcc.analysis import (AnalysisConfig, analyze, band_aperiodicity, continuize_lf0, envelope_from_mcep,
                          estimate_f0, frame_count, mcep_from_envelope, spectral_envelope,
                          synthesize_parametric, warp_frequency)
from vcc.errors import ConfigError, DimensionError, InputError, NoVoicingError
from vcc.features import FeatureSequence
from vcc.signal_io import Waveform

CFG = AnalysisConfig()
NB = CFG.fft_size // 2 + 1


def _db(x):
    return 20.0 / np.log(10.0) * x


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(f0_floor=0), dict(f0_floor=500), dict(mel_warp_alpha=1.0),
                                    dict(mcep_dim=1), dict(fft_size=1000)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            AnalysisConfig(**kw).validate()

    def test_ceil_below_nyquist(self):
        with pytest.raises(ConfigError):
            AnalysisConfig(f0_ceil=500).validate(rate=800)


class TestF0:
    def test_sine_220(self):
        uv, f0 = estimate_f0(sine(220, 1.0), CFG)
        assert len(uv) == frame_count(16000, 16000, 0.005) == 201
        assert uv.mean() >= 0.95
        assert np.max(np.abs(f0[uv > 0] - 220)) <= 2.0

    def test_silence(self):
        uv, f0 = estimate_f0(Waveform(np.zeros(16000), 16000), CFG)
        assert not uv.any() and not f0.any()

    def test_white_noise_frozen_count(self):
        uv, _ = estimate_f0(noise(1.0, seed=0), CFG)
        # seeded oracle run: no frame of this noise passes the voicing threshold
        assert int(uv.sum()) == 0
        assert 1 - uv.mean() >= 0.8

    def test_empty(self):
        with pytest.raises(InputError):
            estimate_f0(Waveform(np.zeros(0), 16000), CFG)

    @pytest.mark.parametrize("freq", [80.0, 150.0, 310.0])
    def test_range(self, freq):
        uv, f0 = estimate_f0(sine(freq, 0.5), CFG)
        assert np.all(np.abs(f0[uv > 0] / freq - 1) < 0.01)
        assert np.all((f0[uv > 0] >= CFG.f0_floor) & (f0[uv > 0] <= CFG.f0_ceil))


class TestContinuize:
    def test_interpolation(self):
        f0 = np.exp([5.0, 0, 0, 5.3])
        f0[1:3] = 0
        np.testing.assert_allclose(continuize_lf0([1, 0, 0, 1], f0), [5.0, 5.1, 5.2, 5.3])

    def test_all_voiced(self):
        f0 = np.array([100.0, 120.0, 90.0])
        np.testing.assert_array_equal(continuize_lf0([1, 1, 1], f0), np.log(f0))

    def test_edges(self):
        np.testing.assert_allclose(continuize_lf0([0, 0, 1], [0, 0, np.exp(4.7)]), [4.7] * 3)

    def test_no_voicing(self):
        with pytest.raises(NoVoicingError):
            continuize_lf0([0, 0], [0, 0])

    @given(st.lists(st.tuples(st.booleans(), st.floats(60, 400)), min_size=1, max_size=60))
    def test_exact_on_voiced_and_idempotent(self, frames):
        uv = np.array([v for v, _ in frames], dtype=float)
        if not uv.any():
            uv[0] = 1
        f0 = np.where(uv > 0, [f for _, f in frames], 0.0)
        lf0 = continuize_lf0(uv, f0)
        assert np.all(np.isfinite(lf0))
        np.testing.assert_array_equal(lf0[uv > 0], np.log(f0[uv > 0]))
        again = continuize_lf0(np.ones_like(uv), np.exp(lf0))
        np.testing.assert_allclose(again, lf0, rtol=0, atol=1e-12)


class TestAperiodicity:
    def test_noise_bands_high(self):
        w = noise(0.5, seed=3)
        n = frame_count(len(w), w.rate, CFG.frame_shift)
        ap = band_aperiodicity(w, np.full(n, 150.0), np.ones(n), CFG)
        assert ap.min() >= 0.9

    def test_unvoiced_forced(self):
        w = sine(220, 0.2)
        n = frame_count(len(w), w.rate, CFG.frame_shift)
        uv = np.zeros(n)
        ap = band_aperiodicity(w, np.zeros(n), uv, CFG)
        np.testing.assert_array_equal(ap, 1.0)

    def test_sine_lowest_band(self):
        w = sine(220, 1.0)
        uv, f0 = estimate_f0(w, CFG)
        ap = band_aperiodicity(w, f0, uv, CFG)
        assert ap.shape == (len(uv), CFG.ap_bands)
        assert ap[uv > 0, 0].max() <= 0.2
        assert np.all((ap >= 0) & (ap <= 1))


class TestEnvelope:
    def test_noise_flat(self):
        w = noise(2.0, seed=7)
        n = frame_count(len(w), w.rate, CFG.frame_shift)
        env = spectral_envelope(w, np.zeros(n), CFG).mean(axis=0)
        band = env[int(0.1 * NB):int(0.4 * NB)]
        assert np.max(np.abs(_db(band - band.mean()))) <= 3.0

    def test_log_homogeneity(self):
        w = toy.vowel_clip(180, 0.5)
        uv, f0 = estimate_f0(w, CFG)
        e1 = spectral_envelope(w, f0, CFG)
        e2 = spectral_envelope(Waveform(w.samples * 0.5, w.rate), f0, CFG)
        assert np.max(np.abs(e2 - e1 - np.log(0.5))) < 1e-3
        m1, m2 = mcep_from_envelope(e1, CFG), mcep_from_envelope(e2, CFG)
        assert np.max(np.abs(m2[:, 0] - m1[:, 0] - np.log(0.5))) < 1e-3
        assert np.max(np.abs(m2[:, 1:] - m1[:, 1:])) < 1e-3

    def test_doubling_shifts_by_ln2(self):
        w = sine(200, 0.3, amp=0.4)
        uv, f0 = estimate_f0(w, CFG)
        e1 = spectral_envelope(w, f0, CFG)
        e2 = spectral_envelope(Waveform(2 * w.samples, w.rate), f0, CFG)
        assert np.max(np.abs(e2 - e1 - np.log(2))) < 1e-3

    def test_silence_floor(self):
        w = Waveform(np.zeros(3200), 16000)
        n = frame_count(len(w), w.rate, CFG.frame_shift)
        env = spectral_envelope(w, np.zeros(n), CFG)
        np.testing.assert_array_equal(env, CFG.envelope_floor)


class TestMelCepstrum:
    def test_constant_envelope(self):
        m = mcep_from_envelope(np.full(NB, -2.5), CFG)
        assert m[0] == pytest.approx(-2.5, abs=1e-9)
        assert np.max(np.abs(m[1:])) < 1e-9

    def test_alpha_zero_is_cepstral_truncation(self, rng):
        env = np.cumsum(rng.normal(0, 0.05, NB))
        direct = np.fft.irfft(env, CFG.fft_size)[:CFG.mcep_dim]
        np.testing.assert_allclose(mcep_from_envelope(env, CFG, alpha=0.0), direct, rtol=0, atol=1e-6)

    def test_warp_endpoints(self):
        w = warp_frequency(np.array([0.0, np.pi]), 0.466)
        np.testing.assert_allclose(w, [0.0, np.pi], atol=1e-12)

    def test_roundtrip_on_vowel_envelopes(self):
        dists = []
        for f0_hz, vowel in [(110, "a"), (160, "i"), (220, "u"), (130, "e"), (250, "o")]:
            w = toy.vowel_clip(f0_hz, 0.4, vowel=vowel)
            uv, f0 = estimate_f0(w, CFG)
            env = spectral_envelope(w, f0, CFG)
            back = envelope_from_mcep(mcep_from_envelope(env, CFG), CFG)
            dists.append(np.sqrt(np.mean(_db(back - env) ** 2, axis=1)))
        assert np.mean(np.concatenate(dists)) <= 0.5

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            mcep_from_envelope(np.zeros(10), CFG)
        with pytest.raises(DimensionError):
            envelope_from_mcep(np.zeros(3), CFG)


class TestAnalyze:
    @settings(max_examples=15)
    @given(st.integers(400, 6000))
    def test_stream_alignment(self, n):
        w = Waveform(np.random.default_rng(n).normal(0, 0.1, n).clip(-1, 1), 16000)
        fs = analyze(w, CFG)
        assert len(fs.uv) == len(fs.lf0) == len(fs.ap) == len(fs.mcep) == frame_count(n, 16000, 0.005)
        assert fs.mcep.shape[1] == CFG.mcep_dim and fs.ap.shape[1] == CFG.ap_bands
        assert np.all(np.isfinite(fs.lf0))

    def test_all_unvoiced_falls_back(self):
        fs = analyze(noise(0.2), CFG)
        np.testing.assert_allclose(fs.lf0, np.log(CFG.f0_floor), rtol=1e-6)


class TestSynthesis:
    def _features(self, n=200, f0=200.0, uv=1.0, ap=0.05, c0=-3.0):
        mcep = np.zeros((n, CFG.mcep_dim))
        mcep[:, 0] = c0
        mcep[:, 1] = 0.3
        return FeatureSequence(np.full(n, uv), np.full(n, np.log(f0)), np.full((n, CFG.ap_bands), ap),
                               mcep, CFG.frame_shift, 16000)

    def test_duration(self):
        w = synthesize_parametric(self._features(150), CFG)
        assert abs(w.duration - 150 * CFG.frame_shift) <= CFG.frame_shift

    def test_f0_consistency(self):
        w = synthesize_parametric(self._features(), CFG)
        uv, f0 = estimate_f0(w, CFG)
        assert uv.mean() > 0.9
        assert np.median(f0[uv > 0]) == pytest.approx(200, abs=4)

    def test_unvoiced(self):
        w = synthesize_parametric(self._features(uv=0.0, ap=1.0), CFG)
        uv, _ = estimate_f0(w, CFG)
        assert 1 - uv.mean() > 0.8

    def test_silent_power(self):
        w = synthesize_parametric(self._features(c0=CFG.envelope_floor), CFG)
        assert np.sqrt(np.mean(w.samples ** 2)) < 1e-3

    def test_toy_vowels_roundtrip_f0(self):
        spk = toy.ToySpeaker("A", f0=140)
        corpus = toy.make_parallel_corpus([spk], 1, 200, CFG, seed=2)
        fs = corpus["A"][0]
        w = toy.render(fs, CFG)
        uv, f0 = estimate_f0(w, CFG)
        # Only frames whose YIN window (about 460 samples) lies inside the signal.
        edge = int(np.ceil(0.5 * 461 / (CFG.frame_shift * w.rate)))
        uv, f0 = uv[edge:len(fs) - edge], f0[edge:len(fs) - edge]
        ref = np.exp(fs.lf0[edge:len(fs) - edge])
        v = uv > 0
        assert v.mean() > 0.9
        assert np.median(np.abs(f0[v] / ref[v] - 1)) <= 0.02
