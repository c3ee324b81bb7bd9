"""Speaker log-F0 statistics, linear log-F0 conversion, feature assembly."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, StatsError
from .features import FeatureSequence


@dataclass(frozen=True)
class SpeakerF0Stats:
    mean_lf0: float
    std_lf0: float
    voiced_frames: int
    speaker_id: str = ""

    def __post_init__(self):
        if self.std_lf0 < 0:
            raise StatsError("std_lf0 must be non-negative")
        if self.voiced_frames < 1:
            raise StatsError("stats need at least one voiced frame")

    def to_dict(self):
        return {"speaker_id": self.speaker_id, "mean_lf0": self.mean_lf0,
                "std_lf0": self.std_lf0, "voiced_frames": self.voiced_frames}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean_lf0"]), float(d["std_lf0"]), int(d["voiced_frames"]),
                   str(d.get("speaker_id", "")))


def collect_stats(features, speaker_id: str = "") -> SpeakerF0Stats:
    """Mean and population std of log-F0 over voiced frames only."""
    voiced = [np.asarray(fs.lf0, dtype=np.float64)[np.asarray(fs.uv) > 0.5] for fs in features]
    values = np.concatenate(voiced) if voiced else np.zeros(0)
    if len(values) == 0:
        raise StatsError(f"speaker {speaker_id!r}: no voiced frames")
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((values - mean) ** 2) / n)
    return SpeakerF0Stats(mean, std, n, speaker_id)


def linear_lf0_transform(lf0, src: SpeakerF0Stats, tgt: SpeakerF0Stats):
    """Map log-F0 so its z-score under ``src`` equals the z-score under ``tgt``."""
    if not src.std_lf0 > 0:
        raise StatsError("source log-F0 std is zero; the linear transform is undefined")
    return tgt.mean_lf0 + (tgt.std_lf0 / src.std_lf0) * (np.asarray(lf0, dtype=np.float64) - src.mean_lf0)


def assemble_converted_features(src_fs: FeatureSequence, converted_mcep, converted_lf0) -> FeatureSequence:
    """Source U/V and aperiodicity with converted log-F0 and mel-cepstrum."""
    converted_mcep = np.atleast_2d(np.asarray(converted_mcep))
    converted_lf0 = np.asarray(converted_lf0)
    n = len(src_fs)
    if len(converted_mcep) != n or len(converted_lf0) != n:
        raise DimensionError(
            f"frame counts differ: source {n}, mcep {len(converted_mcep)}, lf0 {len(converted_lf0)}"
        )
    return src_fs.replace(lf0=converted_lf0.astype(src_fs.lf0.dtype, copy=False),
                          mcep=converted_mcep.astype(src_fs.mcep.dtype, copy=False))


def save_stats(path, stats) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in stats], indent=1, sort_keys=True) + "\n")


def load_stats(path) -> dict:
    return {d["speaker_id"]: SpeakerF0Stats.from_dict(d) for d in json.loads(Path(path).read_text())}
