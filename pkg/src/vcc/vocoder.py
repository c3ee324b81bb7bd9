"""Shallow autoregressive softmax vocoder and its staged fine-tuning schedule.

The network predicts the mu-law code of sample ``t`` from codes ``< t`` and
per-sample acoustic conditioning: code embedding, a stack of gated dilated
causal convolutions with residual and skip paths, and a two-layer softmax
head. Training is teacher-forced; generation samples one code at a time
through :func:`vcc.kernels.ar_generate`.
"""
from __future__ import annotations

import fnmatch
import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, IntegrityError
from .features import FeatureSequence
from .nn import (Activation, Adam, CausalConv, Dense, Embedding, load_checkpoint, param_hash,
                 receptive_field, save_checkpoint, sigmoid, softmax_cross_entropy)
from .signal_io import Waveform, mulaw_decode, mulaw_encode

log = logging.getLogger(__name__)

HOP_TOLERANCE = 0.5


def default_dilations(max_exp=9, stacks=2):
    return tuple(2 ** i for i in range(max_exp + 1)) * stacks


@dataclass(frozen=True)
class VocoderConfig:
    q: int = 256
    residual_channels: int = 64
    skip_channels: int = 64
    kernel: int = 2
    dilations: tuple = default_dilations()
    upsample: str = "repeat"
    input_mode: str = "companded"
    lr: float = 1e-3
    batch_segments: int = 4
    segment_len: int = 2000
    steps_per_epoch: int = 50
    grad_clip: float = 10.0
    dev_max_samples: int = 16000

    def validate(self) -> "VocoderConfig":
        if self.q < 4 or self.q & (self.q - 1):
            raise ConfigError("q must be a power of two >= 4")
        if self.upsample not in ("repeat", "linear"):
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")
        if self.input_mode not in ("companded", "onehot"):
            raise ConfigError(f"unknown input mode {self.input_mode!r}")
        if not self.dilations or receptive_field(self.dilations, self.kernel) < 2:
            raise ConfigError("receptive field must be at least 2")
        return self

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.dilations, self.kernel)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "dilations" in d:
            d["dilations"] = tuple(d["dilations"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def upsample_conditioning(fs: FeatureSequence, rate=None, mode="repeat"):
    """Per-sample conditioning vectors (``frames * hop`` rows).

    ``repeat`` holds frame ``i`` over samples ``[i*hop, (i+1)*hop)``;
    ``linear`` interpolates from frame ``i`` toward frame ``i+1`` across
    that span and holds the last frame.
    """
    rate = fs.source_rate if rate is None else rate
    exact = fs.frame_shift * rate
    hop = int(round(exact))
    if hop < 1 or abs(exact - hop) > HOP_TOLERANCE:
        raise ConfigError(f"frame shift {fs.frame_shift}s at {rate} Hz is not an integral hop")
    feats = fs.as_matrix()
    if mode == "repeat":
        return np.repeat(feats, hop, axis=0)
    if mode != "linear":
        raise ConfigError(f"unknown upsample mode {mode!r}")
    n = len(feats)
    if n == 0:
        return np.zeros((0, feats.shape[1]))
    pos = np.arange(n * hop) / hop
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = (pos - lo)[:, None]
    return feats[lo] * (1 - frac) + feats[hi] * frac


class CompandedInput(Dense):
    """Dense map from the companded bin-center value of each code.

    Neighbouring codes get neighbouring inputs, which keeps sampled
    trajectories close to the teacher-forced ones when a draw lands one bin off.
    """

    def __init__(self, q, dim, rng=None, dtype=np.float32, name="embed"):
        super().__init__(1, dim, rng, dtype, name=name)
        self.levels = (2.0 * (np.arange(q) + 0.5) / q - 1.0).astype(dtype)[:, None]

    def forward(self, codes):
        return super().forward(self.levels[np.asarray(codes)])

    def table(self):
        return self.levels @ self.w.value + self.b.value


class ARVocoder:
    """Gated dilated-convolution AR model over mu-law codes."""

    def __init__(self, cfg: VocoderConfig, cond_dim, cond_mean=None, cond_std=None, rate=16000.0,
                 seed=0, dtype=np.float32):
        self.cfg = cfg.validate()
        self.cond_dim = int(cond_dim)
        self.rate = float(rate)
        self.dtype = dtype
        R, S, Q = cfg.residual_channels, cfg.skip_channels, cfg.q
        rng = np.random.default_rng(seed)
        if cfg.input_mode == "onehot":
            self.embed = Embedding(Q, R, rng, dtype, name="embed")
        else:
            self.embed = CompandedInput(Q, R, rng, dtype, name="embed")
        self.blocks = []
        for i, d in enumerate(cfg.dilations):
            self.blocks.append(dict(
                conv=CausalConv(R, 2 * R, cfg.kernel, d, rng, dtype, name=f"block{i}.conv"),
                cond=Dense(self.cond_dim, 2 * R, rng, dtype, name=f"block{i}.cond"),
                res=Dense(R, R, rng, dtype, name=f"block{i}.res"),
                skip=Dense(R, S, rng, dtype, name=f"block{i}.skip"),
            ))
        self.out1 = Dense(S, S, rng, dtype, name="out1")
        self.out2 = Dense(S, Q, rng, dtype, zero=True, name="out2")
        self.relu = Activation("relu", S)
        self.cond_mean = np.zeros(self.cond_dim) if cond_mean is None else np.asarray(cond_mean, np.float64)
        self.cond_std = np.ones(self.cond_dim) if cond_std is None else np.asarray(cond_std, np.float64)

    def params(self):
        ps = self.embed.params()
        for b in self.blocks:
            for key in ("conv", "cond", "res", "skip"):
                ps += b[key].params()
        return ps + self.out1.params() + self.out2.params()

    def layer_table(self):
        specs = [self.embed.spec]
        for b in self.blocks:
            specs += [b[k].spec for k in ("conv", "cond", "res", "skip")]
        return specs + [self.out1.spec, self.out2.spec]

    @property
    def receptive_field(self):
        return self.cfg.receptive_field

    def normalize_cond(self, cond):
        return ((np.asarray(cond, dtype=np.float64) - self.cond_mean) / self.cond_std).astype(self.dtype)

    # -- teacher-forced graph ---------------------------------------------
    def forward(self, inputs, cond):
        """Logits for every position; ``inputs`` are the already shifted codes."""
        R = self.cfg.residual_channels
        h, ec = self.embed.forward(inputs)
        skip_sum = 0.0
        caches = []
        for b in self.blocks:
            zc, cc = b["conv"].forward(h)
            zd, dc = b["cond"].forward(cond)
            z = zc + zd
            a = np.tanh(z[..., :R])
            s = sigmoid(z[..., R:])
            g = a * s
            r, rc = b["res"].forward(g)
            k, kc = b["skip"].forward(g)
            h = h + r
            skip_sum = skip_sum + k
            caches.append((cc, dc, a, s, rc, kc))
        o1, c1 = self.relu.forward(skip_sum)
        o2, c2 = self.out1.forward(o1)
        o3, c3 = self.relu.forward(o2)
        logits, c4 = self.out2.forward(o3)
        return logits, (ec, caches, c1, c2, c3, c4)

    def backward(self, cache, dlogits):
        ec, caches, c1, c2, c3, c4 = cache
        d = self.out2.backward(c4, dlogits)
        d = self.relu.backward(c3, d)
        d = self.out1.backward(c2, d)
        dskip = self.relu.backward(c1, d)
        dh = np.zeros(dskip.shape[:-1] + (self.cfg.residual_channels,), dtype=dskip.dtype)
        for b, (cc, dc, a, s, rc, kc) in zip(reversed(self.blocks), reversed(caches)):
            dg = b["skip"].backward(kc, dskip) + b["res"].backward(rc, dh)
            dz = np.concatenate([dg * s * (1 - a * a), dg * a * s * (1 - s)], axis=-1)
            b["cond"].backward(dc, dz)
            dh = dh + b["conv"].backward(cc, dz)
        self.embed.backward(ec, dh)

    def shift_inputs(self, codes):
        codes = np.asarray(codes)
        first = np.full(codes.shape[:-1] + (1,), self.cfg.q // 2, dtype=np.int64)
        return np.concatenate([first, codes[..., :-1]], axis=-1)

    def logits(self, codes, cond, chunk=8000):
        """Teacher-forced logits for a whole sequence, computed in causal chunks."""
        codes = np.asarray(codes)
        cond_n = self.normalize_cond(cond)
        inputs = self.shift_inputs(codes)
        T = len(codes)
        ctx = self.receptive_field - 1
        out = []
        for start in range(0, T, chunk):
            lo = max(0, start - ctx)
            lg, _ = self.forward(inputs[lo:start + chunk], cond_n[lo:start + chunk])
            out.append(lg[start - lo:])
        return np.concatenate(out) if out else np.zeros((0, self.cfg.q))

    # -- persistence ---------------------------------------------------------
    def meta(self):
        return {"model": "ar_vocoder", "config": self.cfg.to_dict(), "cond_dim": self.cond_dim,
                "cond_mean": self.cond_mean.tolist(), "cond_std": self.cond_std.tolist(), "rate": self.rate}

    def save(self, path, step=None, extra=None):
        meta = self.meta()
        meta.update(extra or {})
        return save_checkpoint(path, self.params(), self.layer_table(), meta, step)

    @classmethod
    def from_checkpoint(cls, ck, dtype=np.float32, with_state=False):
        if ck.meta.get("model") != "ar_vocoder":
            raise InputError("checkpoint does not hold an AR vocoder")
        m = ck.meta
        model = cls(VocoderConfig.from_dict(m["config"]), m["cond_dim"], m["cond_mean"], m["cond_std"],
                    m["rate"], dtype=dtype)
        step = ck.load_into(model.params(), with_state=with_state)
        return model, step

    @classmethod
    def load(cls, path, dtype=np.float32):
        return cls.from_checkpoint(load_checkpoint(path), dtype)[0]

    def kernel_weights(self):
        """Float64 weight tuple in the argument order of ``kernels.ar_generate``."""
        f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
        bl = self.blocks
        return (
            *((f(self.embed.w.value), f(self.embed.b.value)) if isinstance(self.embed, Embedding)
              else (f(self.embed.table()), np.zeros(self.cfg.residual_channels))),
            f(np.stack([b["conv"].w.value[0] for b in bl])),
            f(np.stack([b["conv"].w.value[1] if self.cfg.kernel > 1 else np.zeros_like(b["conv"].w.value[0])
                        for b in bl])),
            f(np.stack([b["conv"].b.value + b["cond"].b.value for b in bl])),
            f(np.stack([b["cond"].w.value for b in bl])),
            f(np.stack([b["res"].w.value for b in bl])), f(np.stack([b["res"].b.value for b in bl])),
            f(np.stack([b["skip"].w.value for b in bl])), f(np.stack([b["skip"].b.value for b in bl])),
            f(self.out1.w.value), f(self.out1.b.value), f(self.out2.w.value), f(self.out2.b.value),
            np.ascontiguousarray(self.cfg.dilations, dtype=np.int64),
        )


def teacher_forced_nll(model: ARVocoder, codes, cond):
    """Mean negative log-likelihood in nats per sample."""
    codes = np.asarray(codes)
    cond = np.asarray(cond)
    if len(codes) != len(cond):
        raise InputError(f"codes ({len(codes)}) and conditioning ({len(cond)}) are not sample-aligned")
    if len(codes) == 0:
        return 0.0
    lg = model.logits(codes, cond).astype(np.float64)
    loss, _ = softmax_cross_entropy(lg, codes)
    return loss


def generate(model: ARVocoder, cond, seed=0) -> Waveform:
    """Sample a waveform, one mu-law code per conditioning row."""
    if model.cfg.kernel != 2:
        raise ConfigError("generation kernel supports kernel size 2 only")
    cond = np.asarray(cond)
    n = len(cond)
    if n == 0:
        return Waveform(np.zeros(0), model.rate)
    uniforms = np.random.default_rng(seed).random(n)
    cond_n = np.ascontiguousarray(model.normalize_cond(cond), dtype=np.float64)
    codes = kernels.ar_generate(*model.kernel_weights(), cond_n, uniforms, model.cfg.q // 2)
    return Waveform(mulaw_decode(codes, model.cfg.q), model.rate)


# -- training data -------------------------------------------------------------


@dataclass
class VocoderItem:
    """One utterance: speaker, conditioning features and the target waveform."""

    speaker: str
    utt_id: str
    features: FeatureSequence
    waveform: Waveform
    is_dev: bool = False


def _item_arrays(item: VocoderItem, q, mode):
    cond = upsample_conditioning(item.features, item.waveform.rate, mode)
    codes = mulaw_encode(item.waveform.samples, q)
    n = min(len(cond), len(codes))
    return codes[:n], cond[:n]


def make_vocoder_features(items, mode, cyclevae=None, partner=None):
    """Replace the mel-cepstra of ``items`` according to ``mode``.

    ``natural`` passes features through; ``reconstructed`` uses the CycleVAE
    same-speaker reconstruction; ``generated`` uses the cyclic path (convert
    to a partner speaker, then back to the utterance's own speaker). Other
    streams and the target waveform are untouched.
    """
    if mode not in ("natural", "reconstructed", "generated"):
        raise ConfigError(f"unknown feature mode {mode!r}")
    if mode == "natural":
        return list(items)
    if cyclevae is None:
        raise InputError(f"feature mode {mode!r} needs a trained CycleVAE")
    out = []
    spk_list = cyclevae.inventory.speakers
    for it in items:
        src = it.features.mcep
        if mode == "reconstructed":
            mc = cyclevae.convert_mcep(src, it.speaker)
        else:
            other = partner(it.speaker) if partner else spk_list[(spk_list.index(it.speaker) + 1) % len(spk_list)]
            mc = cyclevae.convert_mcep(cyclevae.convert_mcep(src, other), it.speaker)
        fs = it.features.replace(mcep=mc.astype(it.features.mcep.dtype))
        out.append(VocoderItem(it.speaker, it.utt_id, fs, it.waveform, it.is_dev))
    return out


def split_dev(items, n_dev=10, min_utts=None):
    """Mark the last ``n_dev`` utterances (sorted by id) of each speaker as dev.

    Speakers with fewer than ``min_utts`` utterances (default ``n_dev + 1``)
    keep everything for training.
    """
    min_utts = n_dev + 1 if min_utts is None else min_utts
    by_spk = {}
    for it in items:
        by_spk.setdefault(it.speaker, []).append(it)
    for spk, lst in by_spk.items():
        lst.sort(key=lambda it: it.utt_id)
        for i, it in enumerate(lst):
            it.is_dev = len(lst) >= min_utts and i >= len(lst) - n_dev
    return items


COND_STD_FLOOR = 0.01


def fit_cond_normalizer(items):
    """Per-dimension mean and std of the frame features of ``items``.

    The std is floored: a nearly constant stream (one sustained vowel, say)
    would otherwise turn small edge-frame deviations into huge inputs.
    """
    mats = np.concatenate([it.features.as_matrix() for it in items])
    return mats.mean(axis=0), np.maximum(mats.std(axis=0), COND_STD_FLOOR)


class BatchQueue:
    """Prepare minibatches on a worker thread behind a bounded queue.

    Batches come from one producer in a fixed order, so the sequence is
    identical to drawing them inline with the same generator.
    """

    def __init__(self, make_batch, n_batches, depth=2):
        self._q = queue.Queue(maxsize=depth)
        self._n = n_batches
        self._thread = threading.Thread(target=self._run, args=(make_batch,), daemon=True)
        self._thread.start()

    def _run(self, make_batch):
        try:
            for _ in range(self._n):
                self._q.put(make_batch())
        except BaseException as exc:  # surfaced on the consumer side
            self._q.put(exc)

    def __iter__(self):
        for _ in range(self._n):
            item = self._q.get()
            if isinstance(item, BaseException):
                raise item
            yield item
        self._thread.join()


def _batch_maker(arrays, cfg: VocoderConfig, rf, rng, model):
    """Random crops of ``segment_len + rf - 1`` samples; loss on at most the last ``segment_len``.

    Crops that would start before the utterance are left-padded with the
    silence code and edge-replicated conditioning, and the padding is masked.
    """
    lens = np.array([len(c) for c, _, _ in arrays], dtype=np.float64)
    probs = lens / lens.sum()
    span = cfg.segment_len + rf - 1
    silence = cfg.q // 2

    def make():
        inputs_b, targets_b, cond_b, mask_b = [], [], [], []
        for i in rng.choice(len(arrays), size=cfg.batch_segments, p=probs):
            codes, inputs, cond = arrays[i]
            n = len(codes)
            # a virtual loss window that may hang over either end, so that
            # every sample is equally likely to be a training target
            stop = int(rng.integers(1, n + cfg.segment_len))
            end = min(stop, n)
            n_loss = end - max(stop - cfg.segment_len, 0)
            lo = max(end - span, 0)
            pad = span - (end - lo)
            mask = np.zeros(span)
            mask[span - n_loss:] = 1.0
            inputs_b.append(np.pad(inputs[lo:end], (pad, 0), constant_values=silence))
            targets_b.append(np.pad(codes[lo:end], (pad, 0), constant_values=silence))
            cond_b.append(np.pad(cond[lo:end], ((pad, 0), (0, 0)), mode="edge"))
            mask_b.append(mask)
        return (np.stack(inputs_b), model.normalize_cond(np.stack(cond_b)),
                np.stack(targets_b), np.stack(mask_b))

    return make


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    dev_nll: float | None


def train_epochs(model: ARVocoder, items, epochs, seed=0, early_stop=None, on_epoch=None, opt=None):
    """Teacher-forced training; returns (epoch logs, best-state params or None, optimizer).

    With ``early_stop`` the dev NLL is tracked after each epoch and the
    parameters of the best epoch are returned for the caller to keep.
    """
    cfg = model.cfg
    rf = model.receptive_field
    rng = np.random.default_rng(seed)
    train_items = [it for it in items if not it.is_dev] or list(items)
    dev_items = [it for it in items if it.is_dev]
    arrays = [(c, model.shift_inputs(c), x) for c, x in
              (_item_arrays(it, cfg.q, cfg.upsample) for it in train_items) if len(c)]
    if not arrays:
        raise InputError("no training samples")
    dev_arrays = [_item_arrays(it, cfg.q, cfg.upsample) for it in dev_items]
    opt = opt or Adam(model.params(), lr=cfg.lr, clip=cfg.grad_clip)
    make = _batch_maker(arrays, cfg, rf, rng, model)
    logs, best_state = [], None
    for epoch in range(epochs):
        losses = []
        for inputs, cond, targets, mask in BatchQueue(make, cfg.steps_per_epoch):
            logits, cache = model.forward(inputs, cond)
            loss, dlogits = softmax_cross_entropy(logits, targets, mask)
            model.backward(cache, dlogits)
            opt.step()
            losses.append(loss)
        dev = dev_nll(model, dev_arrays, cfg.dev_max_samples) if dev_arrays else None
        logs.append(EpochLog(epoch, float(np.mean(losses)), dev))
        log.info("vocoder epoch %d train %.4f dev %s", epoch, logs[-1].train_nll, dev)
        if on_epoch:
            on_epoch(logs[-1])
        if early_stop is not None and dev is not None:
            decision = early_stop_update(early_stop, dev)
            if early_stop.best_index == early_stop.updates - 1:
                best_state = [p.value.copy() for p in model.params()]
            if decision == "stop":
                break
    return logs, best_state, opt


def dev_nll(model, dev_arrays, max_samples):
    total, count = 0.0, 0
    for codes, cond in dev_arrays:
        codes, cond = codes[:max_samples], cond[:max_samples]
        total += teacher_forced_nll(model, codes, cond) * len(codes)
        count += len(codes)
    return total / max(count, 1)


# -- early stopping and stage plans ----------------------------------------------


@dataclass
class EarlyStopState:
    patience: int = 3
    best_dev_nll: float = float("inf")
    epochs_since_improvement: int = 0
    best_index: int = -1
    updates: int = 0


def early_stop_update(state: EarlyStopState, dev_nll_value) -> str:
    """Record one dev evaluation; ``"stop"`` after ``patience`` non-improvements."""
    if not np.isfinite(dev_nll_value):
        raise InputError("dev NLL must be finite")
    if dev_nll_value < state.best_dev_nll:
        state.best_dev_nll = float(dev_nll_value)
        state.best_index = state.updates
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    state.updates += 1
    return "stop" if state.epochs_since_improvement >= state.patience else "continue"


FEATURE_MODES = ("natural", "reconstructed", "generated")


@dataclass
class Stage:
    stage: int
    features: str
    speakers: list
    epochs: int
    patience: int | None = None
    per_speaker: bool = False

    def matches(self, spk):
        return any(fnmatch.fnmatchcase(spk, pat) for pat in self.speakers)


@dataclass
class StagePlan:
    stages: list = field(default_factory=list)

    def validate(self) -> "StagePlan":
        nums = [s.stage for s in self.stages]
        if nums != list(range(1, len(nums) + 1)):
            raise ConfigError(f"stages must be numbered 1..N in order, got {nums}")
        for s in self.stages:
            if s.features not in FEATURE_MODES:
                raise ConfigError(f"stage {s.stage}: unknown feature source {s.features!r}")
        return self

    def to_json(self):
        return json.dumps({"stages": [asdict(s) for s in self.stages]}, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        return cls([Stage(**s) for s in d["stages"]]).validate()

    @classmethod
    def four_step(cls, all_speakers, corpus_speakers, target_speakers, epochs=(10, 10, 10, 10), patience=3):
        """The natural -> reconstructed -> generated(corpus) -> generated(target) schedule."""
        return cls([
            Stage(1, "natural", list(all_speakers), epochs[0]),
            Stage(2, "reconstructed", list(all_speakers), epochs[1]),
            Stage(3, "generated", list(corpus_speakers), epochs[2], patience),
            Stage(4, "generated", list(target_speakers), epochs[3], patience, per_speaker=True),
        ]).validate()


@dataclass
class StageResult:
    stage: int
    speaker: str | None
    init_hash: str | None
    final_hash: str
    checkpoint: str
    logs: list
    stopped_early: bool
    n_speakers: int
    n_items: int


def stage_checkpoint_path(out_dir, stage, speaker=None):
    name = f"vocoder_stage{stage}" + (f"_{speaker}" if speaker else "") + ".vckp"
    return Path(out_dir) / name


def _select(items, stage: Stage):
    return [it for it in items if stage.matches(it.speaker)]


def run_stage(stage: Stage, items, cfg: VocoderConfig, out_dir, cyclevae=None, init=None,
              expected_hash=None, seed=0, speaker=None, cond_norm=None) -> StageResult:
    """Train one stage (or one per-speaker branch of a stage) and write its checkpoint."""
    chosen = _select(items, stage) if speaker is None else [it for it in items if it.speaker == speaker]
    if not chosen:
        raise InputError(f"stage {stage.stage}: no utterances match speakers {stage.speakers}")
    feats = make_vocoder_features(chosen, stage.features, cyclevae)
    if init is None:
        mean, std = cond_norm or fit_cond_normalizer(feats)
        d = feats[0].features.as_matrix().shape[1]
        model = ARVocoder(cfg, d, mean, std, feats[0].waveform.rate, seed=seed)
        init_hash = None
    else:
        ck = load_checkpoint(init)
        if expected_hash is not None and ck.sha256 != expected_hash:
            raise IntegrityError(f"stage {stage.stage}: init checkpoint {init} does not match the previous stage")
        model, _ = ARVocoder.from_checkpoint(ck)
        init_hash = param_hash(model.params())
        if expected_hash is not None and init_hash != expected_hash:
            raise IntegrityError(f"stage {stage.stage}: loaded parameters do not match the previous stage")
    es = EarlyStopState(stage.patience) if stage.patience else None
    logs, best_state, _ = train_epochs(model, feats, stage.epochs, seed=seed + 7919 * stage.stage, early_stop=es)
    if best_state is not None:
        for p, v in zip(model.params(), best_state):
            p.value = v
    path = stage_checkpoint_path(out_dir, stage.stage, speaker)
    path.parent.mkdir(parents=True, exist_ok=True)
    final = model.save(path, extra={"stage": stage.stage, "speaker": speaker, "init_hash": init_hash,
                                    "features": stage.features})
    stopped = bool(es and es.epochs_since_improvement >= es.patience)
    return StageResult(stage.stage, speaker, init_hash, final, str(path), [asdict(l) for l in logs],
                       stopped, len({it.speaker for it in chosen}), len(chosen))


def run_stage_plan(plan: StagePlan, items, cfg: VocoderConfig, out_dir, cyclevae=None, seed=0):
    """Run every stage, each initialized from the previous stage's checkpoint.

    A per-speaker stage trains one branch per matching speaker, each starting
    from the same parent checkpoint.
    """
    plan.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    prev = None
    for stage in plan.stages:
        init = prev.checkpoint if prev else None
        expected = prev.final_hash if prev else None
        if stage.per_speaker:
            speakers = sorted({it.speaker for it in _select(items, stage)})
            branch = [run_stage(stage, items, cfg, out_dir, cyclevae, init, expected, seed, spk)
                      for spk in speakers]
            results.extend(branch)
            prev = branch[-1] if branch else prev
        else:
            prev = run_stage(stage, items, cfg, out_dir, cyclevae, init, expected, seed)
            results.append(prev)
    return results
