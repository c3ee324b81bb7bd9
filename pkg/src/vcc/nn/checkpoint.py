"""Binary checkpoint format with a parameter hash for chain verification.

Layout (little-endian)::

    b"VCKP"  u32 version
    u32 n_layers, then per layer: u8 kind, u32 in_dim, u32 out_dim, u32 kernel, u32 dilation
    u32 meta_len, meta JSON (parameter names/shapes plus model metadata)
    u64 blob_len, parameter blob (f32)
    32-byte SHA-256 of the parameter blob
    u8 has_state; if set: u64 adam step, Adam m blob (f32), Adam v blob (f32)
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, FormatError, IntegrityError
from .layers import LayerSpec

MAGIC = b"VCKP"
VERSION = 1
KIND_CODES = {"dense": 0, "activation": 1, "gru_cell": 2, "causal_conv": 3, "embedding": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


def param_blob(params) -> bytes:
    return b"".join(np.ascontiguousarray(p.value, dtype="<f4").tobytes() for p in params)


def param_hash(params) -> str:
    """SHA-256 over the float32 serialization of ``params`` in order."""
    return hashlib.sha256(param_blob(params)).hexdigest()


@dataclass
class Checkpoint:
    layers: list
    names: list
    arrays: list
    meta: dict
    sha256: str
    step: int = 0
    adam_m: list = field(default_factory=list)
    adam_v: list = field(default_factory=list)

    def load_into(self, params, with_state=True):
        """Copy stored values into ``params`` (matched by position and name)."""
        if len(params) != len(self.arrays):
            raise IntegrityError(f"checkpoint holds {len(self.arrays)} tensors, model has {len(params)}")
        for p, name, a in zip(params, self.names, self.arrays):
            if p.name != name or p.shape != a.shape:
                raise IntegrityError(f"tensor mismatch: model {p.name}{p.shape} vs checkpoint {name}{a.shape}")
            p.value = a.astype(p.value.dtype)
            p.zero_grad()
            p.grad = np.zeros_like(p.value)
        if with_state and self.adam_m:
            for p, m, v in zip(params, self.adam_m, self.adam_v):
                p.adam_m = m.astype(p.value.dtype)
                p.adam_v = v.astype(p.value.dtype)
        else:
            for p in params:
                p.adam_m = np.zeros_like(p.value)
                p.adam_v = np.zeros_like(p.value)
        actual = param_hash(params)
        if actual != self.sha256:
            raise IntegrityError(f"loaded parameters hash {actual[:12]} != stored {self.sha256[:12]}")
        return self.step if with_state else 0


def save_checkpoint(path, params, layers=(), meta=None, step=None) -> str:
    """Write ``params`` (and Adam state when ``step`` is given); return the hash."""
    meta = dict(meta or {})
    meta["tensors"] = [[p.name, list(p.shape)] for p in params]
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(layers)))
    for spec in layers:
        buf.write(struct.pack("<B4I", KIND_CODES[spec.kind], spec.in_dim, spec.out_dim,
                              spec.kernel, spec.dilation))
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_bytes)) + meta_bytes)
    blob = param_blob(params)
    digest = hashlib.sha256(blob)
    buf.write(struct.pack("<Q", len(blob)) + blob + digest.digest())
    if step is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01" + struct.pack("<Q", step))
        for attr in ("adam_m", "adam_v"):
            buf.write(b"".join(np.ascontiguousarray(getattr(p, attr), dtype="<f4").tobytes() for p in params))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return digest.hexdigest()


def _split(blob, shapes):
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float32)
    out, pos = [], 0
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        out.append(flat[pos:pos + n].reshape(shape))
        pos += n
    return out


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        if data[:4] != MAGIC:
            raise FormatError(f"{path}: not a VCKP checkpoint")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 8
        (n_layers,) = struct.unpack_from("<I", data, pos)
        pos += 4
        layers = []
        for _ in range(n_layers):
            kind, a, b, k, d = struct.unpack_from("<B4I", data, pos)
            layers.append(LayerSpec(KIND_NAMES[kind], a, b, k, d))
            pos += 17
        (meta_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos:pos + meta_len])
        pos += meta_len
        (blob_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        blob = data[pos:pos + blob_len]
        pos += blob_len
        stored = data[pos:pos + 32].hex()
        pos += 32
        if len(blob) != blob_len or len(stored) != 64:
            raise CorruptFileError(f"{path}: truncated parameter section")
        if hashlib.sha256(blob).hexdigest() != stored:
            raise IntegrityError(f"{path}: parameter blob does not match its SHA-256")
        names = [t[0] for t in meta["tensors"]]
        shapes = [tuple(t[1]) for t in meta["tensors"]]
        ck = Checkpoint(layers, names, _split(blob, shapes), meta, stored)
        if data[pos:pos + 1] == b"\x01":
            (ck.step,) = struct.unpack_from("<Q", data, pos + 1)
            pos += 9
            ck.adam_m = _split(data[pos:pos + blob_len], shapes)
            ck.adam_v = _split(data[pos + blob_len:pos + 2 * blob_len], shapes)
            if len(data) < pos + 2 * blob_len:
                raise CorruptFileError(f"{path}: truncated optimizer state")
        return ck
    except (struct.error, KeyError, ValueError) as exc:
        if isinstance(exc, (IntegrityError, FormatError, CorruptFileError)):
            raise
        raise CorruptFileError(f"{path}: {exc}") from exc
