import struct
import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import sine
from vcc.analysis import AnalysisConfig, estimate_f0
from vcc.errors import ConfigError, CorruptFileError, FormatError, InputError
from vcc.signal_io import (Waveform, mulaw_bin_edges, mulaw_decode, mulaw_encode, read_wav, resample,
                           write_wav)


def _write_pcm16(path, frames, rate=16000, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(frames, dtype="<i2").tobytes())


def _write_float32(path, samples, rate=16000, channels=1, extensible=False):
    data = np.asarray(samples, dtype="<f4").tobytes()
    block = 4 * channels
    if extensible:
        guid = struct.pack("<H", 3) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
        fmt = struct.pack("<HHIIHHHHI", 0xFFFE, channels, rate, rate * block, block, 32, 22, 32, 0) + guid
    else:
        fmt = struct.pack("<HHIIHH", 3, channels, rate, rate * block, block, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestWaveform:
    def test_rejects_out_of_range(self):
        with pytest.raises(InputError):
            Waveform(np.array([0.0, 1.5]), 16000)

    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(4), 0)


class TestReadWav:
    def test_silence(self, tmp_path):
        p = tmp_path / "s.wav"
        _write_pcm16(p, np.zeros(16000))
        w = read_wav(p)
        assert w.rate == 16000 and len(w) == 16000
        assert not np.any(w.samples)

    def test_stereo_antiphase_averages_to_zero(self, tmp_path):
        p = tmp_path / "st.wav"
        x = (np.sin(np.arange(1000) / 7.0) * 20000).astype(int)
        _write_pcm16(p, np.stack([x, -x], axis=1).reshape(-1), channels=2)
        assert not np.any(read_wav(p).samples)

    def test_full_scale_value(self, tmp_path):
        p = tmp_path / "fs.wav"
        _write_pcm16(p, [32767, -32768])
        w = read_wav(p)
        assert w.samples[0] == 32767 / 32768
        assert w.samples[1] == -1.0

    @pytest.mark.parametrize("extensible", [False, True])
    def test_float32(self, tmp_path, extensible):
        p = tmp_path / "f.wav"
        x = np.linspace(-0.5, 0.5, 101)
        _write_float32(p, x, extensible=extensible)
        np.testing.assert_allclose(read_wav(p).samples, x.astype(np.float32), rtol=0, atol=0)

    def test_unsupported_encoding(self, tmp_path):
        p = tmp_path / "u8.wav"
        with wave.open(str(p), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(1)
            fh.setframerate(8000)
            fh.writeframes(bytes(100))
        with pytest.raises(FormatError):
            read_wav(p)

    def test_not_riff(self, tmp_path):
        p = tmp_path / "x.wav"
        p.write_bytes(b"hello world, not audio")
        with pytest.raises(FormatError):
            read_wav(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.wav"
        _write_pcm16(p, np.arange(1000))
        p.write_bytes(p.read_bytes()[:500])
        with pytest.raises(CorruptFileError):
            read_wav(p)

    def test_write_read_roundtrip(self, tmp_path):
        w = sine(300, 0.1)
        write_wav(tmp_path / "r.wav", w)
        back = read_wav(tmp_path / "r.wav")
        assert back.rate == w.rate
        assert np.max(np.abs(back.samples - w.samples)) <= 0.5 / 32768 + 1e-12


class TestMuLaw:
    def test_fixed_points(self):
        assert mulaw_encode(0.0) == 128
        assert mulaw_encode(1.0) == 255
        assert mulaw_encode(-1.0) == 0

    def test_decode_centre_bins(self):
        z = mulaw_decode(128)
        assert 0 < z < 1e-3
        lo, hi = mulaw_bin_edges(255)
        assert abs(mulaw_decode(255) - 1.0) <= hi - lo

    def test_exhaustive_code_roundtrip(self):
        codes = np.arange(256)
        np.testing.assert_array_equal(mulaw_encode(mulaw_decode(codes)), codes)

    def test_independent_formula(self):
        # Scalar re-derivation of the companding law, evaluated point by point.
        import math

        for x in np.linspace(-1, 1, 257):
            f = math.copysign(math.log(1 + 255 * abs(x)) / math.log(256), x)
            expect = min(max(math.floor((f + 1) / 2 * 256), 0), 255)
            assert mulaw_encode(float(x)) == expect

    @pytest.mark.parametrize("q", [0, 2, 3, 100])
    def test_bad_q(self, q):
        with pytest.raises(ConfigError):
            mulaw_encode(0.1, q)

    def test_clamps_beyond_full_scale(self):
        assert mulaw_encode(3.0) == 255 and mulaw_encode(-7.0) == 0

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert mulaw_encode(lo) <= mulaw_encode(hi)

    @given(st.floats(-1, 1), st.sampled_from([16, 64, 256, 1024]))
    def test_amplitude_roundtrip_within_bin(self, x, q):
        c = mulaw_encode(x, q)
        lo, hi = mulaw_bin_edges(c, q)
        assert abs(mulaw_decode(c, q) - x) <= (hi - lo) + 1e-12


class TestResample:
    def test_identity(self):
        w = sine(440, 0.5)
        out = resample(w, w.rate)
        assert len(out) == len(w)
        assert np.corrcoef(out.samples, w.samples)[0, 1] > 0.999

    def test_length(self):
        assert len(resample(Waveform(np.zeros(16000), 16000), 8000)) == 8000

    def test_reinterpreted_rate_doubles_pitch(self):
        cfg = AnalysisConfig(f0_ceil=600)
        out = resample(sine(220, 1.0), 8000)
        uv, f0 = estimate_f0(Waveform(out.samples, 16000), cfg)
        assert np.median(f0[uv > 0]) == pytest.approx(440, abs=2)

    def test_matches_polyphase_reference(self):
        scipy_signal = pytest.importorskip("scipy.signal")
        w = sine(300, 0.25, amp=0.4)
        ours = resample(w, 12000).samples
        ref = scipy_signal.resample_poly(w.samples, 3, 4)
        core = slice(100, len(ref) - 100)
        assert np.max(np.abs(ours[core] - ref[core])) < 5e-3

    def test_band_limits_when_downsampling(self):
        # 7 kHz is above the 4 kHz Nyquist of an 8 kHz output and must be attenuated.
        out = resample(sine(7000, 0.5), 8000)
        assert np.sqrt(np.mean(out.samples[200:-200] ** 2)) < 0.05

    @given(st.integers(100, 5000), st.sampled_from([8000, 11025, 22050, 24000, 44100]))
    def test_duration_within_one_sample(self, n, new_rate):
        w = Waveform(np.zeros(n), 16000)
        out = resample(w, new_rate)
        assert abs(out.duration - w.duration) <= 1.0 / new_rate

    def test_bad_rate(self):
        with pytest.raises(ConfigError):
            resample(Waveform(np.zeros(10), 16000), 0)
