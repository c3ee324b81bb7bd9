"""Parallel-pair bookkeeping for semi-parallel conversion data.

Each speaker has natural recordings plus synthetic utterances produced by an
external TTS command: "pseudo" counterparts of the other speaker's natural
contents, and "external" renderings of an extra text list. Pairs are typed:

==== ======================= =======================
type source kind             target kind
==== ======================= =======================
1    natural                 natural
2    synthetic_pseudo        natural
3    natural                 synthetic_pseudo
4    synthetic_external      synthetic_external
==== ======================= =======================

Contents recorded naturally by both speakers only yield a type-1 pair.
"""
from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ManifestError

log = logging.getLogger(__name__)

KINDS = ("natural", "synthetic_pseudo", "synthetic_external")
PAIR_KINDS = {
    1: ("natural", "natural"),
    2: ("synthetic_pseudo", "natural"),
    3: ("natural", "synthetic_pseudo"),
    4: ("synthetic_external", "synthetic_external"),
}


@dataclass(frozen=True)
class UtteranceRecord:
    speaker_id: str
    content_id: str
    kind: str
    audio_path: str = ""
    text: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManifestError(f"unknown utterance kind {self.kind!r}")
        if not self.speaker_id or not self.content_id:
            raise ManifestError("speaker_id and content_id must be nonempty")

    @property
    def key(self):
        return (self.speaker_id, self.content_id, self.kind)


@dataclass(frozen=True)
class ParallelPair:
    source: UtteranceRecord
    target: UtteranceRecord
    pair_type: int

    def __post_init__(self):
        if self.source.content_id != self.target.content_id:
            raise ManifestError("paired utterances must share content_id")
        if PAIR_KINDS.get(self.pair_type) != (self.source.kind, self.target.kind):
            raise ManifestError(f"kinds {self.source.kind}/{self.target.kind} do not make a type-{self.pair_type} pair")


def validate_manifest(records):
    """Reject duplicate (speaker, content, kind) keys; return the records as a list."""
    records = list(records)
    counts = Counter(r.key for r in records)
    dups = [k for k, n in counts.items() if n > 1]
    if dups:
        raise ManifestError(f"duplicate manifest records: {dups[:3]}")
    return records


def read_manifest(path):
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(UtteranceRecord(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return validate_manifest(records)


def write_manifest(path, records):
    text = "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records)
    Path(path).write_text(text)


def _by_kind(records, kind):
    return {r.content_id: r for r in records if r.kind == kind}


def enumerate_pairs(source, target):
    """All typed pairs between two validated manifests, sorted by content then type."""
    source, target = validate_manifest(source), validate_manifest(target)
    s_nat, t_nat = _by_kind(source, "natural"), _by_kind(target, "natural")
    s_ps, t_ps = _by_kind(source, "synthetic_pseudo"), _by_kind(target, "synthetic_pseudo")
    s_ext, t_ext = _by_kind(source, "synthetic_external"), _by_kind(target, "synthetic_external")
    pairs = []
    for cid in s_nat.keys() & t_nat.keys():
        pairs.append(ParallelPair(s_nat[cid], t_nat[cid], 1))
    for cid in (t_nat.keys() - s_nat.keys()) & s_ps.keys():
        pairs.append(ParallelPair(s_ps[cid], t_nat[cid], 2))
    for cid in (s_nat.keys() - t_nat.keys()) & t_ps.keys():
        pairs.append(ParallelPair(s_nat[cid], t_ps[cid], 3))
    for cid in s_ext.keys() & t_ext.keys():
        pairs.append(ParallelPair(s_ext[cid], t_ext[cid], 4))
    pairs.sort(key=lambda p: (p.source.content_id, p.pair_type))
    return pairs


def pair_counts(pairs):
    counts = Counter(p.pair_type for p in pairs)
    return {f"type{t}": counts.get(t, 0) for t in sorted(PAIR_KINDS)} | {"total": len(pairs)}


@dataclass(frozen=True)
class TtsRequest:
    """Ask the TTS voice of ``speaker_id`` to read ``text`` as ``content_id``."""

    content_id: str
    text: str
    speaker_id: str
    kind: str


def _speaker(records, default=None):
    spk = {r.speaker_id for r in records}
    if len(spk) > 1:
        raise ManifestError(f"manifest mixes speakers {sorted(spk)}")
    return next(iter(spk), default)


def pseudo_parallel_requests(source, target, source_speaker=None, target_speaker=None):
    """One request per natural utterance whose content the other side never recorded."""
    source, target = validate_manifest(source), validate_manifest(target)
    s_spk = _speaker(source, source_speaker)
    t_spk = _speaker(target, target_speaker)
    s_nat, t_nat = _by_kind(source, "natural"), _by_kind(target, "natural")
    reqs = [TtsRequest(cid, s_nat[cid].text, t_spk, "synthetic_pseudo")
            for cid in sorted(s_nat.keys() - t_nat.keys())]
    reqs += [TtsRequest(cid, t_nat[cid].text, s_spk, "synthetic_pseudo")
             for cid in sorted(t_nat.keys() - s_nat.keys())]
    return reqs


def content_hash(text):
    return "ext_" + hashlib.sha256(text.strip().encode()).hexdigest()[:16]


def external_requests(texts, speakers):
    """Every (deduplicated) text for every speaker, sharing content ids across speakers."""
    texts = list(texts)
    if not texts:
        raise ManifestError("external text list is empty")
    unique = {}
    for t in texts:
        unique.setdefault(content_hash(t), t.strip())
    return [TtsRequest(cid, text, spk, "synthetic_external")
            for cid, text in sorted(unique.items()) for spk in speakers]


@dataclass
class TtsOutcome:
    request: TtsRequest
    record: UtteranceRecord | None
    returncode: int
    stderr: str = ""

    @property
    def ok(self):
        return self.record is not None


def run_tts(requests, command, out_dir, jobs=1, timeout=None):
    """Invoke ``command + [text_file, speaker_id, out_wav]`` per request.

    A nonzero exit status (or a missing output file) marks the request
    failed; failed requests produce no manifest record.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    command = [command] if isinstance(command, str) else list(command)

    def one(req):
        out = out_dir / req.speaker_id / f"{req.content_id}.wav"
        out.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("w", suffix=".txt", dir=out_dir, delete=False) as fh:
            fh.write(req.text)
            text_file = fh.name
        try:
            proc = subprocess.run(command + [text_file, req.speaker_id, str(out)],
                                  capture_output=True, text=True, timeout=timeout)
            code, err = proc.returncode, proc.stderr
        except (OSError, subprocess.TimeoutExpired) as exc:
            code, err = -1, str(exc)
        finally:
            Path(text_file).unlink(missing_ok=True)
        if code != 0 or not out.exists():
            log.warning("TTS failed for %s/%s (exit %s)", req.speaker_id, req.content_id, code)
            return TtsOutcome(req, None, code if code != 0 else -1, err)
        rec = UtteranceRecord(req.speaker_id, req.content_id, req.kind, str(out), req.text)
        return TtsOutcome(req, rec, 0, err)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, requests))


def merge_records(manifest, outcomes):
    """Manifest extended with the successful TTS outputs."""
    extra = [o.record for o in outcomes if o.ok]
    return validate_manifest(list(manifest) + extra)


def with_speaker(records, speaker_id):
    return [replace(r, speaker_id=speaker_id) for r in records]
