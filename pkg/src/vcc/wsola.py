"""WSOLA time-scale modification and F0-shift data augmentation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, StatsError
from .f0convert import SpeakerF0Stats
from .kernels import wsola_search
from .signal_io import Waveform, resample

MIN_FACTOR, MAX_FACTOR = 0.25, 4.0
MIN_STATS_FRAMES = 100


@dataclass(frozen=True)
class TsmConfig:
    window_len: float = 0.025
    overlap: float = 0.5
    search_tolerance: float = 0.010

    def validate(self) -> "TsmConfig":
        if not 0 < self.overlap < 1:
            raise ConfigError("overlap must lie in (0, 1)")
        if not 0 <= self.search_tolerance < self.window_len:
            raise ConfigError("search_tolerance must be shorter than window_len")
        return self


def _check_factor(factor):
    if not MIN_FACTOR <= factor <= MAX_FACTOR:
        raise ConfigError(f"factor {factor} outside [{MIN_FACTOR}, {MAX_FACTOR}]")


def wsola_stretch(w: Waveform, factor: float, cfg: TsmConfig = TsmConfig()) -> Waveform:
    """Lengthen (factor > 1) or shorten the waveform without changing pitch.

    Output frames sit on a fixed synthesis hop. Each analysis frame is taken
    near its nominal input position, shifted within the search tolerance to
    best match the natural continuation of the previously copied frame.
    """
    _check_factor(factor)
    cfg.validate()
    rate = w.rate
    n_in = len(w)
    n_out = int(round(factor * n_in))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(n_out), rate)
    win_len = max(4, int(round(cfg.window_len * rate)) // 2 * 2)
    hop_out = max(1, int(round(win_len * (1 - cfg.overlap))))
    hop_in = hop_out / factor
    tol = int(round(cfg.search_tolerance * rate))
    half = win_len // 2

    pad = win_len + tol + hop_out
    x = np.concatenate([np.zeros(pad), w.samples, np.zeros(pad + win_len)])
    window = np.hanning(win_len + 1)[:-1]
    n_frames = int(math.ceil(n_out / hop_out)) + 1
    out = np.zeros(n_frames * hop_out + win_len)
    norm = np.zeros_like(out)

    prev = None
    for k in range(n_frames):
        nominal = int(round(k * hop_in)) - half
        if prev is None:
            start = nominal
        else:
            ref = x[prev + hop_out + pad:prev + hop_out + pad + win_len]
            lo = max(nominal - tol, -pad)
            hi = min(nominal + tol, n_in + pad - win_len)
            start = wsola_search(x, ref, lo + pad, max(lo, hi) + pad) - pad
        seg = x[start + pad:start + pad + win_len]
        o = k * hop_out
        out[o:o + win_len] += seg * window
        norm[o:o + win_len] += window
        prev = start
    y = out[half:half + n_out] / np.maximum(norm[half:half + n_out], 1e-3)
    return Waveform(np.clip(y, -1.0, 1.0), rate)


def f0_transform(w: Waveform, ratio: float, cfg: TsmConfig = TsmConfig()) -> Waveform:
    """Scale F0 by ``ratio`` keeping duration: stretch, then resample."""
    _check_factor(ratio)
    stretched = wsola_stretch(w, ratio, cfg)
    shifted = resample(Waveform(stretched.samples, w.rate), w.rate / ratio)
    return Waveform(shifted.samples, w.rate)


def compute_f0_ratio(src: SpeakerF0Stats, tgt: SpeakerF0Stats) -> float:
    """F0 ratio that moves the target's mean log-F0 onto the source's."""
    for s in (src, tgt):
        if s.voiced_frames < MIN_STATS_FRAMES:
            raise StatsError(
                f"speaker {s.speaker_id!r} has {s.voiced_frames} voiced frames, need {MIN_STATS_FRAMES}"
            )
    return math.exp(src.mean_lf0 - tgt.mean_lf0)


@dataclass(frozen=True)
class AugmentationEntry:
    target_speaker_id: str
    source_speaker_id: str
    f0_ratio: float
    derived_speaker_id: str


@dataclass
class AugmentationPlan:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "AugmentationPlan":
        entries = [AugmentationEntry(**json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(entries)

    def save(self, path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path):
        return cls.from_jsonl(Path(path).read_text())


def derived_speaker_id(target: str, source: str) -> str:
    return f"{target}_x_{source}"


def build_augmentation_plan(targets, sources, stats) -> AugmentationPlan:
    """One pseudo-speaker per (target, source): target audio at the source's F0 register."""
    missing = [s for s in list(targets) + list(sources) if s not in stats]
    if missing and len(targets) and len(sources):
        raise StatsError(f"missing F0 stats for speakers: {sorted(set(missing))}")
    entries = []
    for tgt in targets:
        for src in sources:
            ratio = compute_f0_ratio(stats[src], stats[tgt])
            entries.append(AugmentationEntry(tgt, src, ratio, derived_speaker_id(tgt, src)))
    ids = [e.derived_speaker_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate speakers produce clashing derived ids")
    return AugmentationPlan(entries)
