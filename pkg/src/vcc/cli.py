"""``vcc`` command-line pipeline.

Every command works inside one work directory (``work_dir`` in the config)::

    features/<speaker>/<utt>.vcft   analysis cache, plus index.json
    augmented/<speaker>/<utt>.wav   F0-shifted pseudo-speakers, plus inventory.json
    stats.json                      per-speaker log-F0 statistics
    cyclevae.vckp                   spectral conversion model
    vocoder/                        stage checkpoints and chain.json
    runlog.jsonl                    one audit record per command

A run holds an advisory lock on ``<work_dir>/.lock``. Exit status is 0 on
success, 1 when some items failed, 2 for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import fcntl
import glob
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisConfig, analyze
from .cyclevae import CycleVAE, CycleVaeConfig
from .cyclevae import train as train_cyclevae
from .errors import ConfigError, ManifestError, UsageError, VccError
from .f0convert import (assemble_converted_features, collect_stats, linear_lf0_transform, load_stats,
                        save_stats)
from .features import load_features, save_features
from .signal_io import read_wav, write_wav
from .vocoder import (ARVocoder, Stage, StagePlan, VocoderConfig, VocoderItem, generate, run_stage,
                      split_dev, stage_checkpoint_path, upsample_conditioning)
from .wsola import AugmentationPlan, TsmConfig, build_augmentation_plan, f0_transform

log = logging.getLogger("vcc")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# -- configuration -------------------------------------------------------------------


@dataclass
class PipelineConfig:
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    cyclevae: CycleVaeConfig = field(default_factory=CycleVaeConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    stage_plan: StagePlan | None = None
    corpus: dict = field(default_factory=dict)
    work_dir: Path = Path("vcc_work")
    cache_dir: Path | None = None
    seed: int = 0
    cyclevae_epochs: int = 20
    augment_targets: list = field(default_factory=list)
    augment_sources: list = field(default_factory=list)
    vocoder_corpus_speakers: list | None = None
    target_speakers: list | None = None
    dev_utts: int = 10
    tts_command: list | None = None
    raw: dict = field(default_factory=dict)

    @property
    def features_dir(self) -> Path:
        return self.cache_dir or self.work_dir / "features"

    @classmethod
    def from_dict(cls, d, base=Path(".")):
        known = {"analysis", "cyclevae", "vocoder", "stage_plan", "corpus", "work_dir", "cache_dir", "seed",
                 "cyclevae_epochs", "augment_targets", "augment_sources", "vocoder_corpus_speakers",
                 "target_speakers", "dev_utts", "tts_command"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                analysis=AnalysisConfig(**d.get("analysis", {})).validate(),
                cyclevae=CycleVaeConfig.from_dict(d.get("cyclevae", {})).validate(),
                vocoder=VocoderConfig.from_dict(d.get("vocoder", {})).validate(),
                stage_plan=StagePlan.from_json(d["stage_plan"]) if d.get("stage_plan") else None,
                corpus={k: str(base / v) for k, v in d.get("corpus", {}).items()},
                work_dir=base / d.get("work_dir", "vcc_work"),
                cache_dir=base / d["cache_dir"] if d.get("cache_dir") else None,
                seed=int(d.get("seed", 0)),
                cyclevae_epochs=int(d.get("cyclevae_epochs", 20)),
                augment_targets=list(d.get("augment_targets", [])),
                augment_sources=list(d.get("augment_sources", [])),
                vocoder_corpus_speakers=d.get("vocoder_corpus_speakers"),
                target_speakers=d.get("target_speakers"),
                dev_utts=int(d.get("dev_utts", 10)),
                tts_command=d.get("tts_command"),
                raw=dict(d),
            )
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        if cfg.seed < 0 or cfg.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, path.parent)


# -- run bookkeeping -----------------------------------------------------------------


@contextmanager
def work_lock(work_dir: Path):
    work_dir.mkdir(parents=True, exist_ok=True)
    with open(work_dir / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise UsageError(f"{work_dir} is locked by another vcc run") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class RunLog:
    def __init__(self, cfg: PipelineConfig, command, argv):
        self.cfg, self.command, self.argv = cfg, command, list(argv)
        self.artifacts = {}
        self.failures = []

    def artifact(self, path):
        self.artifacts[str(path)] = sha256_file(path)

    def fail(self, item, exc):
        log.error("%s: %s", item, exc)
        self.failures.append({"item": str(item), "error": str(exc)})

    def write(self, status):
        rec = {"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "version": __version__, "command": self.command,
               "argv": self.argv, "seed": self.cfg.seed, "config": self.cfg.raw,
               "config_sha256": _json_hash(self.cfg.raw), "status": status,
               "artifacts": self.artifacts, "failures": self.failures}
        with open(self.cfg.work_dir / "runlog.jsonl", "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- corpus discovery ----------------------------------------------------------------


def discover_audio(cfg: PipelineConfig):
    """``[(speaker, utt_id, path)]`` for the configured corpus and any augmented speakers."""
    out = []
    for spk, pattern in sorted(cfg.corpus.items()):
        for p in sorted(glob.glob(pattern)):
            out.append((spk, Path(p).stem, Path(p)))
    inv = cfg.work_dir / "augmented" / "inventory.json"
    if inv.exists():
        for spk in json.loads(inv.read_text())["speakers"]:
            for p in sorted((cfg.work_dir / "augmented" / spk).glob("*.wav")):
                out.append((spk, p.stem, p))
    return out


def _index_path(cfg):
    return cfg.features_dir / "index.json"


def read_index(cfg):
    p = _index_path(cfg)
    return json.loads(p.read_text()) if p.exists() else {}


def _extract_one(args):
    audio, out, analysis_dict = args
    fs = analyze(read_wav(audio), AnalysisConfig(**analysis_dict))
    save_features(out, fs)
    return sha256_file(out)


def _map(fn, jobs, items):
    """Ordered map that captures per-item exceptions as results."""

    if jobs <= 1 or len(items) <= 1:
        res = []
        for it in items:
            try:
                res.append(fn(it))
            except Exception as exc:  # reported per item by the caller
                res.append(exc)
        return res
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, it) for it in items]
        res = []
        for f in futures:
            try:
                res.append(f.result())
            except Exception as exc:
                res.append(exc)
        return res


# -- commands ------------------------------------------------------------------------


def cmd_extract(cfg: PipelineConfig, args, runlog: RunLog):
    cfg.features_dir.mkdir(parents=True, exist_ok=True)
    index = read_index(cfg)
    acfg = cfg.analysis.to_dict()
    acfg_hash = _json_hash(acfg)
    todo, keys = [], []
    for spk, utt, path in discover_audio(cfg):
        key = f"{spk}/{utt}"
        out = cfg.features_dir / spk / f"{utt}.vcft"
        try:
            audio_hash = sha256_file(path)
        except OSError as exc:
            runlog.fail(path, exc)
            continue
        entry = index.get(key)
        if (entry and entry["audio_sha256"] == audio_hash and entry["analysis_sha256"] == acfg_hash
                and out.exists() and sha256_file(out) == entry["features_sha256"]):
            continue
        out.parent.mkdir(parents=True, exist_ok=True)
        todo.append((str(path), str(out), acfg))
        keys.append((key, spk, utt, str(path), audio_hash, out))
    results = _map(_extract_one, args.jobs, todo)
    for (key, spk, utt, path, audio_hash, out), res in zip(keys, results):
        if isinstance(res, Exception):
            runlog.fail(path, res)
            index.pop(key, None)
            continue
        index[key] = {"speaker": spk, "utt": utt, "audio": path, "audio_sha256": audio_hash,
                      "analysis_sha256": acfg_hash, "features_sha256": res, "features": str(out)}
        runlog.artifacts[str(out)] = res
    _index_path(cfg).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    print(json.dumps({"computed": len(todo) - len(runlog.failures), "failed": len(runlog.failures),
                      "cached": len(index)}))
    return EXIT_PARTIAL if runlog.failures else EXIT_OK


def cached_features(cfg, speakers=None):
    """``{speaker: [(utt, FeatureSequence, audio_path)]}`` from the extract index."""
    out = {}
    for key, e in sorted(read_index(cfg).items()):
        if speakers is None or e["speaker"] in speakers:
            out.setdefault(e["speaker"], []).append((e["utt"], load_features(e["features"]), e["audio"]))
    return out


def cmd_stats(cfg, args, runlog):
    feats = cached_features(cfg)
    if not feats:
        raise UsageError("no cached features; run `vcc extract` first")
    stats, failed = [], 0
    for spk, utts in feats.items():
        try:
            stats.append(collect_stats([fs for _, fs, _ in utts], spk))
        except VccError as exc:
            runlog.fail(spk, exc)
            failed += 1
    path = cfg.work_dir / "stats.json"
    save_stats(path, stats)
    runlog.artifact(path)
    for s in stats:
        print(f"{s.speaker_id}\tmean_lf0={s.mean_lf0:.4f}\tstd_lf0={s.std_lf0:.4f}\tvoiced={s.voiced_frames}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _augment_one(args):
    src, out, ratio = args
    w = f0_transform(read_wav(src), ratio, TsmConfig())
    write_wav(out, w)
    return sha256_file(out)


def cmd_augment(cfg, args, runlog):
    if args.plan:
        plan = AugmentationPlan.load(args.plan)
    else:
        stats_path = cfg.work_dir / "stats.json"
        if not stats_path.exists() and cfg.augment_targets:
            raise UsageError("no stats.json; run `vcc stats` or pass --plan")
        stats = load_stats(stats_path) if stats_path.exists() else {}
        plan = build_augmentation_plan(cfg.augment_targets, cfg.augment_sources, stats)
    if not plan.entries:
        print(json.dumps({"entries": 0, "files": 0}))
        return EXIT_OK
    aug = cfg.work_dir / "augmented"
    aug.mkdir(parents=True, exist_ok=True)
    plan.save(aug / "plan.jsonl")
    by_spk = {}
    for spk, pattern in cfg.corpus.items():
        by_spk[spk] = sorted(glob.glob(pattern))
    jobs = []
    for e in plan.entries:
        files = by_spk.get(e.target_speaker_id)
        if not files:
            runlog.fail(e.target_speaker_id, "no source audio for augmentation target")
            continue
        (aug / e.derived_speaker_id).mkdir(exist_ok=True)
        for f in files:
            jobs.append((f, str(aug / e.derived_speaker_id / f"{Path(f).stem}.wav"), e.f0_ratio))
    for (src, out, _), res in zip(jobs, _map(_augment_one, args.jobs, jobs)):
        if isinstance(res, Exception):
            runlog.fail(src, res)
        else:
            runlog.artifacts[out] = res
    speakers = sorted({e.derived_speaker_id for e in plan.entries})
    (aug / "inventory.json").write_text(json.dumps({"speakers": speakers}, indent=1) + "\n")
    print(json.dumps({"entries": len(plan.entries), "files": len(jobs) - len(runlog.failures),
                      "speakers": len(speakers)}))
    return EXIT_PARTIAL if runlog.failures else EXIT_OK


def cmd_pairs(cfg, args, runlog):
    from . import pairing

    source = pairing.read_manifest(args.source)
    target = pairing.read_manifest(args.target)
    texts = Path(args.external).read_text().splitlines() if args.external else []
    texts = [t for t in texts if t.strip()]
    failed = 0
    if args.synthesize:
        if not cfg.tts_command:
            raise ConfigError("--synthesize needs tts_command in the config")
        s_spk, t_spk = pairing._speaker(source), pairing._speaker(target)
        reqs = pairing.pseudo_parallel_requests(source, target)
        if texts:
            reqs += pairing.external_requests(texts, [s_spk, t_spk])
        outcomes = pairing.run_tts(reqs, cfg.tts_command, cfg.work_dir / "tts", jobs=args.jobs)
        failed = sum(not o.ok for o in outcomes)
        for o in outcomes:
            if not o.ok:
                runlog.fail(f"{o.request.speaker_id}/{o.request.content_id}", f"TTS exit {o.returncode}")
        source = pairing.merge_records(source, [o for o in outcomes if o.request.speaker_id == s_spk])
        target = pairing.merge_records(target, [o for o in outcomes if o.request.speaker_id == t_spk])
        pairing.write_manifest(cfg.work_dir / "source_manifest.jsonl", source)
        pairing.write_manifest(cfg.work_dir / "target_manifest.jsonl", target)
    pairs = pairing.enumerate_pairs(source, target)
    out = Path(args.out) if args.out else cfg.work_dir / "pairs.jsonl"
    out.write_text("".join(json.dumps({"type": p.pair_type, "content_id": p.source.content_id,
                                       "source": p.source.audio_path, "target": p.target.audio_path},
                                      sort_keys=True) + "\n" for p in pairs))
    runlog.artifact(out)
    print(json.dumps(pairing.pair_counts(pairs), sort_keys=True))
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train_cyclevae(cfg, args, runlog):
    feats = cached_features(cfg)
    if not feats:
        raise UsageError("no cached features; run `vcc extract` first")
    corpus, dev = [], []
    for spk, utts in feats.items():
        n_dev = cfg.dev_utts if len(utts) > cfg.dev_utts else 0
        for i, (_, fs, _) in enumerate(utts):
            (dev if i >= len(utts) - n_dev else corpus).append((spk, fs.mcep))
    epochs = args.epochs if args.epochs is not None else cfg.cyclevae_epochs
    res = train_cyclevae(corpus, cfg.cyclevae, epochs, dev=dev or None, speakers=sorted(feats), seed=cfg.seed)
    path = cfg.work_dir / "cyclevae.vckp"
    res.model.save(path)
    runlog.artifact(path)
    print(json.dumps({"epochs": epochs, "best_epoch": res.best_epoch,
                      "final_train_loss": res.train_loss[-1] if res.train_loss else None,
                      "final_dev_loss": res.dev_loss[-1] if res.dev_loss else None}))
    return EXIT_OK


def stage_plan_for(cfg, speakers):
    if cfg.stage_plan is not None:
        return cfg.stage_plan
    corpus = cfg.vocoder_corpus_speakers or speakers
    targets = cfg.target_speakers or speakers
    return StagePlan.four_step(speakers, corpus, targets)


def vocoder_items(cfg):
    items = []
    for spk, utts in cached_features(cfg).items():
        for utt, fs, audio in utts:
            items.append(VocoderItem(spk, utt, fs, read_wav(audio)))
    return split_dev(items, cfg.dev_utts)


def _load_cyclevae(cfg):
    path = cfg.work_dir / "cyclevae.vckp"
    if not path.exists():
        raise UsageError(f"missing CycleVAE checkpoint {path}; run `vcc train-cyclevae` first")
    return CycleVAE.load(path)


def cmd_train_vocoder(cfg, args, runlog):
    items = vocoder_items(cfg)
    if not items:
        raise UsageError("no cached features; run `vcc extract` first")
    plan = stage_plan_for(cfg, sorted({it.speaker for it in items}))
    if not 1 <= args.stage <= len(plan.stages):
        raise UsageError(f"--stage must be in 1..{len(plan.stages)}")
    stage = plan.stages[args.stage - 1]
    out_dir = cfg.work_dir / "vocoder"
    out_dir.mkdir(parents=True, exist_ok=True)
    chain_path = out_dir / "chain.json"
    chain = json.loads(chain_path.read_text()) if chain_path.exists() else {}
    init = expected = None
    if stage.stage > 1:
        prev = chain.get(str(stage.stage - 1))
        init = stage_checkpoint_path(out_dir, stage.stage - 1)
        if prev is None or not init.exists():
            raise UsageError(f"missing vocoder checkpoint for stage {stage.stage - 1} ({init}); "
                             f"run `vcc train-vocoder --stage {stage.stage - 1}` first")
        expected = prev["final_hash"]
    cyclevae = _load_cyclevae(cfg) if stage.features != "natural" else None
    speakers = [None]
    if stage.per_speaker:
        speakers = sorted({it.speaker for it in items if stage.matches(it.speaker)})
    results = [run_stage(stage, items, cfg.vocoder, out_dir, cyclevae, init, expected, cfg.seed, spk)
               for spk in speakers]
    chain[str(stage.stage)] = {"final_hash": results[-1].final_hash, "init_hash": results[-1].init_hash,
                               "branches": {r.speaker or "": r.final_hash for r in results}}
    chain_path.write_text(json.dumps(chain, indent=1, sort_keys=True) + "\n")
    for r in results:
        runlog.artifact(r.checkpoint)
        print(json.dumps({"stage": r.stage, "speaker": r.speaker, "checkpoint": r.checkpoint,
                          "epochs": len(r.logs), "stopped_early": r.stopped_early,
                          "final_dev_nll": r.logs[-1]["dev_nll"] if r.logs else None}))
    return EXIT_OK


def find_vocoder(cfg, tgt, override=None):
    if override:
        return Path(override)
    out_dir = cfg.work_dir / "vocoder"
    last = cfg.stage_plan.stages[-1] if cfg.stage_plan else Stage(4, "generated", ["*"], 1, per_speaker=True)
    path = stage_checkpoint_path(out_dir, last.stage, tgt if last.per_speaker else None)
    if not path.exists():
        raise UsageError(f"missing vocoder checkpoint for stage {last.stage} (target {tgt}): {path}")
    return path


def convert_file(cfg, src, tgt, wav_in, wav_out, vocoder_path=None, seed=0):
    """Analysis, spectral and F0 conversion, then AR generation. Returns the written feature path."""
    stats_path = cfg.work_dir / "stats.json"
    if not stats_path.exists():
        raise UsageError("missing stats.json; run `vcc stats` first")
    stats = load_stats(stats_path)
    for spk in (src, tgt):
        if spk not in stats:
            raise UsageError(f"no F0 statistics for speaker {spk!r}")
    cyclevae = _load_cyclevae(cfg)
    vocoder = ARVocoder.load(find_vocoder(cfg, tgt, vocoder_path))
    w = read_wav(wav_in)
    fs = analyze(w, cfg.analysis)
    mcep = cyclevae.convert_mcep(fs.mcep, tgt)
    lf0 = linear_lf0_transform(fs.lf0, stats[src], stats[tgt])
    conv = assemble_converted_features(fs, mcep, lf0)
    feat_path = Path(wav_out).with_suffix(".vcft")
    save_features(feat_path, conv)
    cond = upsample_conditioning(conv, w.rate, vocoder.cfg.upsample)[:len(w)]
    out = generate(vocoder, cond, seed=seed)
    write_wav(wav_out, out)
    return feat_path


def cmd_convert(cfg, args, runlog):
    feat_path = convert_file(cfg, args.src, args.tgt, args.input, args.output, args.vocoder, cfg.seed)
    runlog.artifact(feat_path)
    runlog.artifact(args.output)
    print(json.dumps({"output": args.output, "features": str(feat_path),
                      "sha256": runlog.artifacts[str(args.output)]}))
    return EXIT_OK


def cmd_selftest(cfg, args, runlog):
    """Seconds-long smoke checks of the numeric core."""
    from .nn import Dense, grad_check
    from .pairing import UtteranceRecord, enumerate_pairs
    from .signal_io import Waveform, mulaw_decode, mulaw_encode

    checks = {}
    codes = np.arange(256)
    checks["mulaw_roundtrip"] = bool(np.array_equal(mulaw_encode(mulaw_decode(codes)), codes))
    t = np.arange(16000) / 16000
    fs = analyze(Waveform(0.5 * np.sin(2 * np.pi * 220 * t), 16000), cfg.analysis)
    voiced = fs.uv > 0
    checks["f0_sine"] = bool(voiced.mean() > 0.9 and np.all(np.abs(np.exp(fs.lf0[voiced]) - 220) < 2))
    w = f0_transform(Waveform(0.5 * np.sin(2 * np.pi * 220 * t), 16000), 1.5)
    checks["wsola_duration"] = abs(len(w) - 16000) <= 320
    rng = np.random.default_rng(cfg.seed)
    layer = Dense(3, 2, rng, np.float64)
    x = rng.normal(size=(4, 3))

    def loss(backprop):
        y, c = layer.forward(x)
        if backprop:
            layer.backward(c, 2 * y)
        return float((y ** 2).sum())

    checks["grad_check"] = grad_check(loss, layer.params()) < 1e-4
    src = [UtteranceRecord("s", f"c{i}", "natural") for i in range(3)]
    tgt = [UtteranceRecord("t", f"c{i}", "natural") for i in range(2)]
    checks["pairing"] = len(enumerate_pairs(src, tgt)) == 2
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(checks.values()) else EXIT_PARTIAL


COMMANDS = {
    "extract": cmd_extract,
    "augment": cmd_augment,
    "pairs": cmd_pairs,
    "stats": cmd_stats,
    "train-cyclevae": cmd_train_cyclevae,
    "train-vocoder": cmd_train_vocoder,
    "convert": cmd_convert,
    "selftest": cmd_selftest,
}


def build_parser():
    p = argparse.ArgumentParser(prog="vcc", description="Voice conversion pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="pipeline configuration (JSON)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-utterance work")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("extract", help="analyze corpus audio into the feature cache")
    a = sub.add_parser("augment", help="write F0-shifted copies of target speakers")
    a.add_argument("--plan", help="augmentation plan (JSONL); built from stats.json when omitted")
    pr = sub.add_parser("pairs", help="enumerate typed parallel pairs from two manifests")
    pr.add_argument("--source", required=True)
    pr.add_argument("--target", required=True)
    pr.add_argument("--external", help="text file with one external sentence per line")
    pr.add_argument("--synthesize", action="store_true", help="run the configured TTS command first")
    pr.add_argument("--out")
    sub.add_parser("stats", help="per-speaker log-F0 statistics")
    t = sub.add_parser("train-cyclevae", help="train the spectral conversion model")
    t.add_argument("--epochs", type=int)
    v = sub.add_parser("train-vocoder", help="run one vocoder training stage")
    v.add_argument("--stage", type=int, required=True)
    c = sub.add_parser("convert", help="convert one utterance")
    c.add_argument("--src", required=True)
    c.add_argument("--tgt", required=True)
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", dest="output", required=True)
    c.add_argument("--vocoder", help="vocoder checkpoint overriding the stage-plan default")
    sub.add_parser("selftest", help="quick numeric smoke test")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
            cfg.raw["seed"] = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except VccError as exc:
        print(f"vcc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "selftest":
        return cmd_selftest(cfg, args, None)
    runlog = RunLog(cfg, args.command, argv)
    try:
        with work_lock(cfg.work_dir):
            code = COMMANDS[args.command](cfg, args, runlog)
            runlog.write("partial" if code == EXIT_PARTIAL else "ok")
            return code
    except (ConfigError, UsageError, ManifestError) as exc:
        print(f"vcc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VccError as exc:
        print(f"vcc: {exc}", file=sys.stderr)
        runlog.write("failed")
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
