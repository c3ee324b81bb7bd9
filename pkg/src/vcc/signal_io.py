"""Waveform container, RIFF/WAVE I/O, mu-law companding and resampling."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFileError, FormatError, InputError

PCM16_SCALE = 32768.0
RESAMPLE_TAPS = 32


@dataclass
class Waveform:
    """Mono audio in [-1, 1] with its sampling rate in Hz."""

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform samples must be finite")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise InputError("waveform samples must lie in [-1, 1]")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


def read_wav(path) -> Waveform:
    """Read a PCM-16 or IEEE float-32 WAV file as a mono waveform.

    Stereo input is averaged to mono. 16-bit samples are divided by 32768.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise CorruptFileError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            if len(body) < size:
                raise CorruptFileError(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            payload = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None or payload is None:
        raise CorruptFileError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag == 0xFFFE and bits in (16, 32):
        # WAVE_FORMAT_EXTENSIBLE; subformat GUID's first two bytes hold the tag.
        fmt_body = data[data.find(b"fmt ") + 8:]
        tag = struct.unpack_from("<H", fmt_body, 24)[0]
    if channels not in (1, 2):
        raise FormatError(f"{path}: {channels} channels not supported")
    if tag == 1 and bits == 16:
        x = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2").astype(np.float64) / PCM16_SCALE
    elif tag == 3 and bits == 32:
        x = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")
    if len(x) % channels:
        raise CorruptFileError(f"{path}: partial sample frame")
    x = x.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(x)):
        raise CorruptFileError(f"{path}: non-finite samples")
    return Waveform(np.clip(x, -1.0, 1.0), float(rate))


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as 16-bit little-endian mono PCM."""
    rate = int(round(w.rate))
    pcm = np.clip(np.round(w.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def _check_q(q):
    if q < 4 or q & (q - 1):
        raise ConfigError(f"quantization channels must be a power of two >= 4, got {q}")


def mulaw_encode(x, q: int = 256):
    """Compand amplitudes to integer codes in ``[0, q-1]``.

    Works elementwise on scalars or arrays; values beyond +-1 are clamped.
    """
    _check_q(q)
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    f = np.sign(x) * np.log1p((q - 1) * np.abs(x)) / np.log(q)
    code = np.floor((f + 1.0) / 2.0 * q)
    code = np.clip(code, 0, q - 1).astype(np.int64)
    return code if code.ndim else int(code)


def mulaw_decode(code, q: int = 256):
    """Return the amplitude at the center of each code's companded bin."""
    _check_q(q)
    c = np.asarray(code, dtype=np.float64)
    y = 2.0 * (c + 0.5) / q - 1.0
    x = np.sign(y) * (np.power(float(q), np.abs(y)) - 1.0) / (q - 1)
    return x if x.ndim else float(x)


def mulaw_bin_edges(code, q: int = 256):
    """Amplitude interval ``(lo, hi)`` covered by ``code``."""
    c = np.asarray(code, dtype=np.float64)

    def expand(y):
        return np.sign(y) * (np.power(float(q), np.abs(y)) - 1.0) / (q - 1)

    return expand(2.0 * c / q - 1.0), expand(2.0 * (c + 1.0) / q - 1.0)


def resample(w: Waveform, new_rate: float, taps: int = RESAMPLE_TAPS) -> Waveform:
    """Band-limited resampling with a Hann-windowed sinc interpolator."""
    if not new_rate > 0:
        raise ConfigError(f"new_rate must be positive, got {new_rate}")
    if new_rate == w.rate:
        return Waveform(w.samples.copy(), w.rate)
    n_in = len(w.samples)
    n_out = int(round(n_in * new_rate / w.rate))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(n_out), new_rate)

    step = w.rate / new_rate
    cutoff = min(1.0, new_rate / w.rate)
    half = taps // 2
    # The kernel support is widened when low-passing so the cutoff is resolved.
    support = int(np.ceil(half / cutoff))
    t = np.arange(n_out) * step
    base = np.floor(t).astype(np.int64)
    out = np.zeros(n_out)
    padded = np.concatenate([np.zeros(support), w.samples, np.zeros(support + 1)])
    for k in range(-support + 1, support + 1):
        idx = base + k
        d = t - idx
        win = 0.5 + 0.5 * np.cos(np.pi * d / support)
        h = cutoff * np.sinc(cutoff * d) * win
        out += h * padded[idx + support]
    return Waveform(np.clip(out, -1.0, 1.0), new_rate)
