"""Synthetic vowel corpora for tests, self-checks and demos.

Speakers share one vowel sequence per utterance; each speaker differs by a
fixed spectral tilt added to the log envelope (and optionally an F0 scale).
Because the mel-cepstral transform is linear, the tilt is a constant
mel-cepstral offset between parallel frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import AnalysisConfig, mcep_from_envelope, synthesize_parametric
from .features import FeatureSequence
from .signal_io import Waveform

# (F1, F2, F3) in Hz
VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
}
BANDWIDTHS = (90.0, 110.0, 170.0)


def vowel_envelope(formants, n_bins, rate, gain=-2.0):
    """Log-amplitude envelope with Lorentzian formant peaks and a -6 dB/oct-ish roll-off."""
    f = np.linspace(0, rate / 2, n_bins)
    power = np.zeros(n_bins)
    for fc, bw in zip(formants, BANDWIDTHS):
        power += 1.0 / (1.0 + ((f - fc) / bw) ** 2)
    power += 1e-3
    return gain + 0.5 * np.log(power) - 0.5 * np.log1p(f / 500.0)


def tilt_offset(n_bins, tilt):
    """Linear log-amplitude tilt: 0 at DC, ``tilt`` nepers at Nyquist."""
    return tilt * np.linspace(0.0, 1.0, n_bins)


@dataclass(frozen=True)
class ToySpeaker:
    speaker_id: str
    tilt: float = 0.0
    f0: float = 150.0


def vowel_track(n_frames, rng, min_len=12, max_len=30, glide=5):
    """Formant trajectories (n_frames, 3) for a random vowel sequence."""
    keys = list(VOWELS)
    targets, lens = [], []
    total = 0
    while total < n_frames:
        targets.append(np.array(VOWELS[keys[rng.integers(len(keys))]], dtype=np.float64))
        lens.append(int(rng.integers(min_len, max_len + 1)))
        total += lens[-1]
    track = np.concatenate([np.repeat(t[None], n, axis=0) for t, n in zip(targets, lens)])[:n_frames]
    if glide > 1:
        kernel = np.ones(glide) / glide
        padded = np.pad(track, ((glide // 2, glide - 1 - glide // 2), (0, 0)), mode="edge")
        track = np.stack([np.convolve(padded[:, j], kernel, mode="valid") for j in range(3)], axis=1)
    return track


def toy_features(speaker: ToySpeaker, track, cfg: AnalysisConfig, rate, frame_shift=None,
                 f0_contour=None, ap_level=0.05, seed=0):
    """FeatureSequence for ``speaker`` following the formant ``track``."""
    frame_shift = frame_shift or cfg.frame_shift
    n = len(track)
    n_bins = cfg.fft_size // 2 + 1
    env = np.stack([vowel_envelope(track[i], n_bins, rate) for i in range(n)])
    env += tilt_offset(n_bins, speaker.tilt)
    mcep = mcep_from_envelope(env, cfg)
    if f0_contour is None:
        rng = np.random.default_rng(seed)
        drift = np.cumsum(rng.normal(0, 0.004, n))
        f0_contour = speaker.f0 * np.exp(0.05 * np.sin(np.arange(n) / 40.0) + drift - drift.mean())
    uv = np.ones(n)
    ap = np.full((n, cfg.ap_bands), ap_level)
    ap[:, -1] = min(1.0, ap_level * 4)
    return FeatureSequence(uv, np.log(f0_contour), ap, mcep, frame_shift, rate)


def make_parallel_corpus(speakers, n_utts, frames_per_utt, cfg=AnalysisConfig(), rate=16000, seed=0):
    """``{speaker_id: [FeatureSequence, ...]}`` with shared vowel tracks across speakers."""
    rng = np.random.default_rng(seed)
    tracks = [vowel_track(frames_per_utt, rng) for _ in range(n_utts)]
    return {
        spk.speaker_id: [toy_features(spk, tr, cfg, rate, seed=seed * 1000 + i) for i, tr in enumerate(tracks)]
        for spk in speakers
    }


def render(fs: FeatureSequence, cfg=AnalysisConfig(), seed=0, peak=0.5) -> Waveform:
    """Parametric waveform for toy features, peak-normalized."""
    w = synthesize_parametric(fs, cfg, seed=seed)
    m = np.max(np.abs(w.samples)) if len(w) else 0.0
    return Waveform(w.samples * (peak / m) if m > 0 else w.samples, w.rate)


def vowel_clip(f0=220.0, seconds=2.0, rate=16000, vowel="a", jitter=0.0, seed=0):
    """Sustained synthetic vowel: harmonic series shaped by a formant envelope."""
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(seed)
    f_inst = f0 * (1 + jitter * np.sin(2 * np.pi * 3 * t))
    phase = 2 * np.pi * np.cumsum(f_inst) / rate
    n_bins = 1025
    env = vowel_envelope(VOWELS[vowel], n_bins, rate)
    freqs = np.linspace(0, rate / 2, n_bins)
    x = np.zeros(n)
    for h in range(1, int(np.ceil(rate / 2 / f0))):
        x += np.exp(np.interp(h * f0, freqs, env)) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return Waveform(0.5 * x / np.max(np.abs(x)), rate)
