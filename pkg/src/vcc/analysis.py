"""Frame-level speech analysis and a parametric resynthesis path.

F0 uses a YIN-style cumulative-mean-normalized difference with a fixed
voicing threshold. The spectral envelope is a pitch-adaptively liftered
log-amplitude spectrum; mel-cepstra are the cosine expansion of that
envelope on a first-order all-pass warped frequency axis.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError, InputError, NoVoicingError
from .features import FeatureSequence
from .signal_io import Waveform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisConfig:
    frame_shift: float = 0.005
    fft_size: int = 1024
    f0_floor: float = 70.0
    f0_ceil: float = 400.0
    mel_warp_alpha: float = 0.466
    mcep_dim: int = 49
    ap_bands: int = 5
    voicing_threshold: float = 0.15
    envelope_floor: float = -18.0
    silence_rms: float = 1e-5

    def validate(self, rate: float | None = None) -> "AnalysisConfig":
        if not 0 < self.f0_floor < self.f0_ceil:
            raise ConfigError("need 0 < f0_floor < f0_ceil")
        if rate is not None and not self.f0_ceil < rate / 2:
            raise ConfigError(f"f0_ceil {self.f0_ceil} must be below Nyquist {rate / 2}")
        if not 0 < self.mel_warp_alpha < 1:
            raise ConfigError("mel_warp_alpha must lie in (0, 1)")
        if self.mcep_dim < 2:
            raise ConfigError("mcep_dim must be >= 2")
        if self.fft_size < 16 or self.fft_size & (self.fft_size - 1):
            raise ConfigError("fft_size must be a power of two")
        if self.ap_bands < 1 or self.frame_shift <= 0:
            raise ConfigError("ap_bands and frame_shift must be positive")
        return self

    def to_dict(self):
        return asdict(self)


def frame_count(n_samples: int, rate: float, frame_shift: float) -> int:
    return int(np.floor(n_samples / rate / frame_shift + 1e-9)) + 1


def _frame_centers(n_samples, rate, frame_shift):
    n = frame_count(n_samples, rate, frame_shift)
    return np.round(np.arange(n) * frame_shift * rate).astype(np.int64)


def _frames(x, centers, length):
    """Extract zero-padded frames of ``length`` samples centered on ``centers``."""
    half = length // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(length)])
    idx = centers[:, None] + np.arange(length)[None, :]
    return padded[idx]


def estimate_f0(w: Waveform, cfg: AnalysisConfig = AnalysisConfig()):
    """Return ``(uv, f0)`` per frame; ``f0`` is 0 on unvoiced frames."""
    if len(w) == 0:
        raise InputError("cannot analyze an empty waveform")
    cfg.validate(w.rate)
    rate = w.rate
    tau_min = max(2, int(np.floor(rate / cfg.f0_ceil)))
    tau_max = int(np.ceil(rate / cfg.f0_floor)) + 1
    win = tau_max
    seg_len = win + tau_max + 1
    centers = _frame_centers(len(w), rate, cfg.frame_shift)
    frames = _frames(w.samples, centers, seg_len)

    # d(tau) = e0 + e_tau - 2 r(tau) over an integration window of ``win`` samples.
    nfft = 1 << int(np.ceil(np.log2(2 * seg_len)))
    head = np.zeros_like(frames)
    head[:, :win] = frames[:, :win]
    acf = np.fft.irfft(np.conj(np.fft.rfft(head, nfft)) * np.fft.rfft(frames, nfft), nfft)[:, :tau_max + 1]
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    e_tau = csum[:, taus + win] - csum[:, taus]
    diff = np.maximum(e_tau[:, :1] + e_tau - 2.0 * acf, 0.0)
    running = np.cumsum(diff[:, 1:], axis=1)
    cmnd = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        cmnd[:, 1:] = np.where(running > 0, diff[:, 1:] * taus[1:] / running, 1.0)

    rms = np.sqrt(csum[:, win] / win)
    f0 = np.zeros(len(frames))
    below = cmnd[:, tau_min:tau_max] < cfg.voicing_threshold
    candidates = np.flatnonzero(below.any(axis=1) & (rms > cfg.silence_rms))
    for i in candidates:
        tau = tau_min + int(np.argmax(below[i]))
        while tau + 1 < tau_max and cmnd[i, tau + 1] < cmnd[i, tau]:
            tau += 1
        a, b, c = diff[i, tau - 1], diff[i, tau], diff[i, tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        period = tau + float(np.clip(shift, -1.0, 1.0))
        freq = rate / period
        if cfg.f0_floor <= freq <= cfg.f0_ceil:
            f0[i] = freq
    uv = (f0 > 0).astype(np.float64)
    return uv, f0


def continuize_lf0(uv, f0):
    """Natural-log F0 with unvoiced gaps linearly interpolated.

    Leading and trailing unvoiced runs take the nearest voiced value.
    """
    uv = np.asarray(uv) > 0.5
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = np.flatnonzero(uv)
    if len(voiced) == 0:
        raise NoVoicingError("no voiced frames to interpolate log-F0 from")
    lf0 = np.interp(np.arange(len(f0)), voiced, np.log(f0[voiced]))
    lf0[voiced] = np.log(f0[voiced])
    return lf0


def _band_masks(n_bins, n_bands):
    edges = np.linspace(0, n_bins, n_bands + 1).round().astype(int)
    masks = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        masks[b, edges[b]:edges[b + 1]] = 1.0
    return masks


def band_aperiodicity(w: Waveform, f0, uv, cfg: AnalysisConfig = AnalysisConfig()):
    """Per-band aperiodicity in [0, 1] from band-limited periodicity.

    For each band the normalized autocorrelation ``r`` of the band-passed,
    windowed frame is read at the pitch period (window bias removed). The
    reported value is ``1 - r**2`` with ``r`` clipped to [0, 1]; unvoiced
    frames are 1 in every band.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    uv = np.asarray(uv) > 0.5
    n = len(f0)
    ap = np.ones((n, cfg.ap_bands))
    idx = np.flatnonzero(uv & (f0 > 0))
    if len(idx) == 0:
        return ap
    length = cfg.fft_size
    centers = _frame_centers(len(w), w.rate, cfg.frame_shift)[:n]
    window = np.hanning(length)
    frames = _frames(w.samples, centers[idx], length) * window
    # Near the signal edges only part of the window covers data.
    support = _frames(np.ones(len(w)), centers[idx], length) * window
    nfft = 2 * length
    power = np.abs(np.fft.rfft(frames, nfft)) ** 2
    wac = np.fft.irfft(np.abs(np.fft.rfft(support, nfft)) ** 2, nfft)
    masks = _band_masks(power.shape[1], cfg.ap_bands)
    period = w.rate / f0[idx]
    lo = np.floor(period).astype(int)
    frac = period - lo
    total = power.sum(axis=1)
    rows = np.arange(len(idx))
    wac_t = ((1 - frac) * wac[rows, lo] + frac * wac[rows, lo + 1]) / wac[:, 0]
    for b in range(cfg.ap_bands):
        bp = power * masks[b]
        acf = np.fft.irfft(bp, nfft)
        r_t = (1 - frac) * acf[rows, lo] + frac * acf[rows, lo + 1]
        energy = acf[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (r_t / energy) / wac_t
        r = np.where(energy > 1e-10 * np.maximum(total, 1e-300), r, 0.0)
        ap[idx, b] = 1.0 - np.clip(np.nan_to_num(r), 0.0, 1.0) ** 2
    return ap


def _lifter(cutoff, n_quef):
    """Raised-cosine lifter, flat to ``cutoff/2`` and zero beyond ``cutoff``."""
    q = np.arange(n_quef)
    cutoff = np.asarray(cutoff, dtype=np.float64)[:, None]
    knee = cutoff / 2
    taper = 0.5 + 0.5 * np.cos(np.pi * (q - knee) / np.maximum(cutoff - knee, 1e-9))
    return np.where(q <= knee, 1.0, np.where(q < cutoff, taper, 0.0))


ENVELOPE_RANGE = 1e-12  # 120 dB below the frame's spectral peak


def _smooth_power(power, f0_bins):
    """Fill the band below F0 and average each frame over one F0 width.

    Below the first harmonic the periodogram holds only window leakage, so it
    is topped up with its mirror image about ``f0 / 2``; the band within one
    F0 of Nyquist gets the same treatment about ``nyquist - f0 / 2``. The rectangular
    average then removes the harmonic comb before the log is taken, which
    keeps the log spectrum from dipping into the gaps between harmonics.
    """
    frames, n_bins = power.shape
    k = np.arange(n_bins, dtype=np.float64)
    out = np.empty_like(power)
    for i in range(frames):
        p = power[i].copy()
        b = f0_bins[i]
        low = k < b
        p[low] += np.interp(b - k[low], k, power[i])
        top = k > k[-1] - b
        p[top] += np.interp(2.0 * k[-1] - b - k[top], k, power[i])
        half = 0.5 * b
        pad = int(np.ceil(half)) + 1
        ext = np.concatenate([p[pad:0:-1], p, p[-2:-pad - 2:-1]])
        cum = np.concatenate([[0.0], np.cumsum(ext)])
        # cum[j] is the sum of ext[:j]; bin centre k sits at ext index k + pad.
        grid = np.arange(len(cum), dtype=np.float64) - 0.5
        hi = np.interp(k + pad + half, grid, cum)
        lo = np.interp(k + pad - half, grid, cum)
        out[i] = (hi - lo) / (2.0 * half)
    return out


def spectral_envelope(w: Waveform, f0, cfg: AnalysisConfig = AnalysisConfig()):
    """Pitch-adaptive cepstrally smoothed log-amplitude envelope.

    Returns an array of shape ``(frames, fft_size // 2 + 1)`` in natural-log
    amplitude, where a full-scale sinusoid peaks near 0. Silent frames sit at
    ``cfg.envelope_floor``.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    n = len(f0)
    length = cfg.fft_size
    centers = _frame_centers(len(w), w.rate, cfg.frame_shift)[:n]
    window = np.hanning(length)
    frames = _frames(w.samples, centers, length) * (window * 2.0 / window.sum())
    power = np.abs(np.fft.rfft(frames)) ** 2
    f_ref = np.where(f0 > 0, f0, cfg.f0_ceil)
    power = _smooth_power(power, f_ref * length / w.rate)
    # A floor tied to each frame's peak keeps the estimate homogeneous in scale;
    # the absolute floor only matters for (near-)silent frames.
    floor = np.maximum(power.max(axis=1, keepdims=True) * ENVELOPE_RANGE, np.exp(2.0 * cfg.envelope_floor))
    logamp = 0.5 * np.log(power + floor)
    cep = np.fft.irfft(logamp, length)
    cutoff = np.minimum(0.5 * w.rate / f_ref, length // 2 - 1)
    lift = _lifter(cutoff, length // 2 + 1)
    lift_full = np.concatenate([lift, lift[:, -2:0:-1]], axis=1)
    return np.fft.rfft(cep * lift_full, length).real


def warp_frequency(omega, alpha):
    """Phase response of the first-order all-pass used for mel warping."""
    return omega + 2.0 * np.arctan(alpha * np.sin(omega) / (1.0 - alpha * np.cos(omega)))


@lru_cache(maxsize=16)
def _mcep_matrices(fft_size, alpha, mcep_dim):
    n_bins = fft_size // 2 + 1
    grid = np.linspace(0.0, np.pi, n_bins)
    # Linear frequencies whose warped image falls on the uniform grid.
    omega = warp_frequency(grid, -alpha)
    cep_basis = np.fft.irfft(np.eye(n_bins), fft_size)[:, : fft_size // 2 + 1]
    k = np.arange(fft_size // 2 + 1)
    weights = np.full(len(k), 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    trig = np.cos(np.outer(k, omega)) * weights[:, None]
    on_warped = cep_basis @ trig
    forward = np.fft.irfft(on_warped, fft_size)[:, :mcep_dim]
    m = np.arange(mcep_dim)
    mweights = np.full(mcep_dim, 2.0)
    mweights[0] = 1.0
    inverse = (np.cos(np.outer(m, warp_frequency(grid, alpha))) * mweights[:, None])
    forward.setflags(write=False)
    inverse.setflags(write=False)
    return forward, inverse


def mcep_from_envelope(env, cfg: AnalysisConfig = AnalysisConfig(), alpha: float | None = None):
    """Mel-cepstrum (``mcep_dim`` values per frame, index 0 = power)."""
    env = np.asarray(env, dtype=np.float64)
    if env.shape[-1] != cfg.fft_size // 2 + 1:
        raise DimensionError(f"envelope has {env.shape[-1]} bins, expected {cfg.fft_size // 2 + 1}")
    a = cfg.mel_warp_alpha if alpha is None else alpha
    forward, _ = _mcep_matrices(cfg.fft_size, float(a), cfg.mcep_dim)
    return env @ forward


def envelope_from_mcep(mcep, cfg: AnalysisConfig = AnalysisConfig(), alpha: float | None = None):
    mcep = np.asarray(mcep, dtype=np.float64)
    if mcep.shape[-1] != cfg.mcep_dim:
        raise DimensionError(f"mcep has {mcep.shape[-1]} coefficients, expected {cfg.mcep_dim}")
    a = cfg.mel_warp_alpha if alpha is None else alpha
    _, inverse = _mcep_matrices(cfg.fft_size, float(a), cfg.mcep_dim)
    return mcep @ inverse


def analyze(w: Waveform, cfg: AnalysisConfig = AnalysisConfig()) -> FeatureSequence:
    """Full feature extraction; all streams share one frame grid."""
    uv, f0 = estimate_f0(w, cfg)
    try:
        lf0 = continuize_lf0(uv, f0)
    except NoVoicingError:
        log.warning("utterance has no voiced frames; log-F0 set to ln(f0_floor)")
        lf0 = np.full(len(f0), np.log(cfg.f0_floor))
    ap = band_aperiodicity(w, f0, uv, cfg)
    env = spectral_envelope(w, f0, cfg)
    mcep = mcep_from_envelope(env, cfg)
    fs = FeatureSequence(uv, lf0, ap, mcep, cfg.frame_shift, w.rate)
    return fs.to_float32()


def synthesize_parametric(fs: FeatureSequence, cfg: AnalysisConfig = AnalysisConfig(), seed: int = 0) -> Waveform:
    """Mixed pulse/noise excitation shaped by the mel-cepstral envelope.

    Each frame's excitation is split into bands, weighted by sqrt(1 - ap)
    for the pulse train and sqrt(ap) for noise, filtered with the zero-phase
    envelope and overlap-added with a Hann window spanning two frame shifts.
    """
    rate = fs.source_rate
    hop = int(round(fs.frame_shift * rate))
    n = len(fs)
    n_out = n * hop
    if n == 0:
        return Waveform(np.zeros(0), rate)
    rng = np.random.default_rng(seed)
    length = cfg.fft_size
    half = length // 2

    f0 = np.where(np.asarray(fs.uv) > 0.5, np.exp(np.asarray(fs.lf0, dtype=np.float64)), 0.0)
    f0_per_sample = np.repeat(f0, hop)
    phase = np.cumsum(f0_per_sample / rate)
    pulses = np.zeros(n_out + 2 * length)
    crossings = np.flatnonzero((np.floor(phase[1:]) > np.floor(phase[:-1])) & (f0_per_sample[1:] > 0)) + 1
    amp = np.sqrt(rate / np.maximum(f0_per_sample[crossings], 1.0))
    pulses[crossings + length] = amp

    masks = _band_masks(half + 1, fs.ap.shape[1])
    ap = np.clip(np.asarray(fs.ap, dtype=np.float64), 0.0, 1.0)
    env = envelope_from_mcep(np.asarray(fs.mcep, dtype=np.float64), cfg)
    gain = np.exp(env)
    out = np.zeros(n_out + 2 * length)
    ola = np.hanning(2 * hop + 1)[:-1]
    for i in range(n):
        center = i * hop + length
        seg_pulse = pulses[center - half:center + half]
        seg_noise = rng.standard_normal(length)
        mix_p = np.sqrt(1.0 - ap[i]) @ masks
        mix_n = np.sqrt(ap[i]) @ masks
        if f0[i] == 0:
            mix_p = np.zeros_like(mix_p)
            mix_n = np.ones_like(mix_n)
        spec = (np.fft.rfft(seg_pulse) * mix_p + np.fft.rfft(seg_noise) * mix_n) * gain[i]
        seg = np.fft.irfft(spec, length)
        out[center - hop:center + hop] += seg[half - hop:half + hop] * ola
    return Waveform(np.clip(out[length:length + n_out], -1.0, 1.0), rate)
