"""Per-frame feature container and the binary feature cache format.

Cache layout (little-endian)::

    b"VCFT"  u32 version
    u32 frame_count  u32 x4 dims (1, 1, ap_bands, mcep_dim)
    f64 frame_shift  f64 source_rate
    f32 uv[F]  f32 lf0[F]  f32 ap[F, ap_bands]  f32 mcep[F, mcep_dim]
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, DimensionError, FormatError

MAGIC = b"VCFT"
VERSION = 1
_HEADER = struct.Struct("<4sI5I2d")


@dataclass
class FeatureSequence:
    uv: np.ndarray
    lf0: np.ndarray
    ap: np.ndarray
    mcep: np.ndarray
    frame_shift: float
    source_rate: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.uv = np.asarray(self.uv)
        self.lf0 = np.asarray(self.lf0)
        self.ap = np.atleast_2d(np.asarray(self.ap))
        self.mcep = np.atleast_2d(np.asarray(self.mcep))
        n = len(self.uv)
        if not (len(self.lf0) == len(self.ap) == len(self.mcep) == n):
            raise DimensionError(
                f"stream frame counts differ: uv={n} lf0={len(self.lf0)} "
                f"ap={len(self.ap)} mcep={len(self.mcep)}"
            )

    def __len__(self):
        return len(self.uv)

    @property
    def n_frames(self) -> int:
        return len(self.uv)

    @property
    def hop(self) -> float:
        """Frame shift in samples at the source rate."""
        return self.frame_shift * self.source_rate

    def as_matrix(self) -> np.ndarray:
        """Stack ``[uv, lf0, ap..., mcep...]`` into one (frames, dims) array."""
        return np.hstack([self.uv[:, None], self.lf0[:, None], self.ap, self.mcep]).astype(np.float64)

    def replace(self, **streams) -> "FeatureSequence":
        kw = dict(uv=self.uv, lf0=self.lf0, ap=self.ap, mcep=self.mcep,
                  frame_shift=self.frame_shift, source_rate=self.source_rate)
        kw.update(streams)
        return FeatureSequence(**kw, meta=dict(self.meta))

    def to_float32(self) -> "FeatureSequence":
        return self.replace(uv=self.uv.astype(np.float32), lf0=self.lf0.astype(np.float32),
                            ap=self.ap.astype(np.float32), mcep=self.mcep.astype(np.float32))

    def to_bytes(self) -> bytes:
        fs = self.to_float32()
        head = _HEADER.pack(MAGIC, VERSION, len(fs), 1, 1, fs.ap.shape[1], fs.mcep.shape[1],
                            float(self.frame_shift), float(self.source_rate))
        body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                        for a in (fs.uv, fs.lf0, fs.ap, fs.mcep))
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureSequence":
        if len(data) < _HEADER.size:
            raise CorruptFileError("feature file shorter than header")
        magic, version, n, d_uv, d_lf0, d_ap, d_mc, shift, rate = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError("not a VCFT feature file")
        if version != VERSION:
            raise FormatError(f"unsupported feature file version {version}")
        if (d_uv, d_lf0) != (1, 1):
            raise CorruptFileError("uv/lf0 streams must be one-dimensional")
        expected = _HEADER.size + 4 * n * (d_uv + d_lf0 + d_ap + d_mc)
        if len(data) != expected:
            raise CorruptFileError(f"feature file has {len(data)} bytes, expected {expected}")
        flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float32)
        uv, lf0, ap, mc = np.split(flat, np.cumsum([n, n, n * d_ap]))
        return cls(uv, lf0, ap.reshape(n, d_ap), mc.reshape(n, d_mc), shift, rate)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_features(path, fs: FeatureSequence) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(fs.to_bytes())
    tmp.replace(path)


def load_features(path) -> FeatureSequence:
    return FeatureSequence.from_bytes(Path(path).read_bytes())
