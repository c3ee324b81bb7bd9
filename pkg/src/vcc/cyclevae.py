"""Cycle-consistent VAE over mel-cepstra with a Laplace latent prior.

The encoder sees a window of normalized mel-cepstral frames and emits a
Laplace posterior per frame. The decoder takes a latent sample and a
one-hot speaker code. During training each cycle decodes the latent twice
(source code: reconstruction, target code: conversion), re-encodes the
converted frames and decodes them back with the source code; the
converted frames feed the next cycle.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, InputError, UsageError
from .nn import Adam, Sequential, load_checkpoint, mlp, save_checkpoint

log = logging.getLogger(__name__)

U_CLAMP = 0.5 - 1e-7


@dataclass(frozen=True)
class CycleVaeConfig:
    mcep_dim: int = 49
    latent_dim: int = 32
    context_window: int = 4
    enc_hidden: tuple = (128, 128)
    dec_hidden: tuple = (128, 128)
    n_cycles: int = 2
    kl_weight: float = 0.1
    lr: float = 1e-3
    batch_segments: int = 16
    segment_frames: int = 32
    grad_clip: float = 10.0

    def validate(self) -> "CycleVaeConfig":
        if self.n_cycles < 1:
            raise ConfigError("n_cycles must be >= 1")
        if self.latent_dim < 1 or self.mcep_dim < 1 or self.context_window < 0:
            raise ConfigError("latent_dim and mcep_dim must be positive, context_window >= 0")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("enc_hidden", "dec_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["enc_hidden"] = list(self.enc_hidden)
        d["dec_hidden"] = list(self.dec_hidden)
        return d


def sample_laplace(mu, b, u):
    """Inverse-CDF Laplace sample ``mu - b*sign(u)*ln(1 - 2|u|)``, ``u`` in (-1/2, 1/2)."""
    u = np.clip(u, -U_CLAMP, U_CLAMP)
    return mu - b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def kl_laplace_std(mu, b):
    """KL(Laplace(mu, b) || Laplace(0, 1)) summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(b <= 0):
        raise DomainError("Laplace scale must be positive")
    a = np.abs(mu)
    kl = -np.log(b) + a + b * np.exp(-a / b) - 1.0
    return kl.sum(axis=-1)


def _kl_terms(mu, log_b):
    """Per-element KL and its partials w.r.t. mu and log_b."""
    b = np.exp(log_b)
    a = np.abs(mu)
    e = np.exp(-a / b)
    kl = -log_b + a + b * e - 1.0
    d_mu = np.sign(mu) * (1.0 - e)
    d_lb = -1.0 + b * e + a * e
    return kl, d_mu, d_lb


def context_frames(x, k):
    """Stack frames ``t-k..t+k`` (edge-replicated) along the feature axis."""
    T = x.shape[-2]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-k, k + 1)[None, :], 0, T - 1)
    g = x[..., idx, :]
    return g.reshape(x.shape[:-2] + (T, (2 * k + 1) * x.shape[-1]))


def context_frames_backward(dctx, k, dim):
    T = dctx.shape[-2]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-k, k + 1)[None, :], 0, T - 1)
    d = dctx.reshape(dctx.shape[:-2] + (T, 2 * k + 1, dim))
    out = np.zeros(dctx.shape[:-2] + (T, dim), dtype=dctx.dtype)
    for j in range(2 * k + 1):
        np.add.at(out, (..., idx[:, j], slice(None)), d[..., :, j, :])
    return out


class SpeakerInventory:
    """Ordered speaker ids mapped to one-hot indices."""

    def __init__(self, speakers):
        self.speakers = list(dict.fromkeys(speakers))
        self.index = {s: i for i, s in enumerate(self.speakers)}

    def __len__(self):
        return len(self.speakers)

    def __contains__(self, spk):
        return spk in self.index

    def idx(self, spk):
        try:
            return self.index[spk]
        except KeyError:
            raise InputError(f"unknown speaker {spk!r}") from None

    def one_hot(self, spk, dtype=np.float32):
        v = np.zeros(len(self), dtype)
        v[self.idx(spk)] = 1.0
        return v


@dataclass
class CycleOutputs:
    recon: list = field(default_factory=list)
    conv: list = field(default_factory=list)
    post: list = field(default_factory=list)
    cyc_post: list = field(default_factory=list)
    cyc_recon: list = field(default_factory=list)
    tape: list = field(default_factory=list, repr=False)

    @property
    def final_cyclic_reconstruction(self):
        return self.cyc_recon[-1]


class CycleVAE:
    def __init__(self, cfg: CycleVaeConfig, speakers, mean=None, std=None, seed=0,
                 dtype=np.float32, zero_head=False):
        self.cfg = cfg.validate()
        self.inventory = speakers if isinstance(speakers, SpeakerInventory) else SpeakerInventory(speakers)
        self.dtype = dtype
        D, L, K = cfg.mcep_dim, cfg.latent_dim, cfg.context_window
        rng = np.random.default_rng(seed)
        self.encoder = mlp([(2 * K + 1) * D, *cfg.enc_hidden, 2 * L], "tanh", rng, dtype,
                           zero_last=zero_head, name="enc")
        self.decoder = mlp([L + len(self.inventory), *cfg.dec_hidden, D], "tanh", rng, dtype, name="dec")
        self.mean = np.zeros(D) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(D) if std is None else np.asarray(std, dtype=np.float64)

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def layer_table(self):
        return self.encoder.layer_table() + self.decoder.layer_table()

    def normalize(self, mcep):
        return ((np.asarray(mcep, dtype=np.float64) - self.mean) / self.std).astype(self.dtype)

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def codes(self, idx, shape):
        """One-hot codes broadcast over ``shape`` (leading dims of a frame batch)."""
        idx = np.broadcast_to(np.asarray(idx), shape[:1]) if len(shape) > 1 else np.asarray(idx)
        eye = np.eye(len(self.inventory), dtype=self.dtype)
        c = eye[idx]
        if len(shape) > 1:
            c = np.broadcast_to(c[:, None, :], shape + (len(self.inventory),))
        else:
            c = np.broadcast_to(c, shape + (len(self.inventory),))
        return c

    # -- building blocks ----------------------------------------------------
    def encode(self, ctx):
        """Posterior ``(mu, log_b)`` for normalized context windows."""
        ctx = np.asarray(ctx, dtype=self.dtype)
        if ctx.shape[-1] != self.encoder.spec.in_dim:
            raise DimensionError(f"encoder expects {self.encoder.spec.in_dim} inputs, got {ctx.shape[-1]}")
        if ctx.size and np.max(np.abs(ctx.reshape(-1, ctx.shape[-1]).mean(axis=0))) > 10:
            raise UsageError("encoder input looks unnormalized (|mean| > 10)")
        out, cache = self.encoder.forward(ctx)
        L = self.cfg.latent_dim
        return out[..., :L], out[..., L:], cache

    def decode(self, z, code):
        z = np.asarray(z, dtype=self.dtype)
        if z.shape[-1] != self.cfg.latent_dim or code.shape[-1] != len(self.inventory):
            raise DimensionError("latent or speaker-code dimension mismatch")
        inp = np.concatenate([z, np.broadcast_to(code, z.shape[:-1] + code.shape[-1:])], axis=-1)
        return self.decoder.forward(inp)

    # -- training graph -----------------------------------------------------
    def cycle_forward(self, x, src_idx, tgt_idx, rng=None, noise=None):
        """Run ``n_cycles`` of reconstruct/convert/re-encode on normalized frames.

        ``x`` is ``(T, D)`` or ``(B, T, D)``. Latent noise comes from ``noise``
        (a list of uniform arrays, two per cycle) or is drawn from ``rng``.
        """
        x = np.asarray(x, dtype=self.dtype)
        K, L = self.cfg.context_window, self.cfg.latent_dim
        lead = x.shape[:-1]
        src = self.codes(src_idx, lead)
        tgt = self.codes(tgt_idx, lead)
        rng = rng if rng is not None else np.random.default_rng(0)
        out = CycleOutputs()
        inp = x
        n = 0
        for _ in range(self.cfg.n_cycles):
            rec = {}
            mu, lb, enc_c = self.encode(context_frames(inp, K))
            u = noise[n] if noise is not None else rng.uniform(-0.5, 0.5, mu.shape)
            n += 1
            z = sample_laplace(mu, np.exp(lb), u).astype(self.dtype)
            xr, dec_r = self.decode(z, src)
            yc, dec_c = self.decode(z, tgt)
            mu2, lb2, enc_c2 = self.encode(context_frames(yc, K))
            u2 = noise[n] if noise is not None else rng.uniform(-0.5, 0.5, mu2.shape)
            n += 1
            z2 = sample_laplace(mu2, np.exp(lb2), u2).astype(self.dtype)
            xc, dec_cyc = self.decode(z2, src)
            rec.update(mu=mu, lb=lb, z=z, enc=enc_c, dec_r=dec_r, dec_c=dec_c,
                       mu2=mu2, lb2=lb2, z2=z2, enc2=enc_c2, dec_cyc=dec_cyc)
            out.recon.append(xr)
            out.conv.append(yc)
            out.post.append((mu, lb))
            out.cyc_post.append((mu2, lb2))
            out.cyc_recon.append(xc)
            out.tape.append(rec)
            inp = yc
        return out

    def loss(self, outputs: CycleOutputs, x, kl_weight=None, backprop=False):
        """Sum over cycles of L1(recon) + L1(cyclic recon) + lambda*(KL(q) + KL(q~)).

        L1 terms sum over mel-cepstral dims and KL over latent dims; both
        average over frames. With ``backprop`` the parameter gradients are
        accumulated.
        """
        lam = self.cfg.kl_weight if kl_weight is None else kl_weight
        x = np.asarray(x, dtype=self.dtype)
        frames = int(np.prod(x.shape[:-1]))
        total = 0.0
        grads = []
        for k in range(len(outputs.recon)):
            r = outputs.recon[k] - x
            c = outputs.cyc_recon[k] - x
            kl1, dmu1, dlb1 = _kl_terms(*outputs.post[k])
            kl2, dmu2, dlb2 = _kl_terms(*outputs.cyc_post[k])
            total += (np.abs(r).sum() + np.abs(c).sum() + lam * (kl1.sum() + kl2.sum())) / frames
            grads.append((np.sign(r) / frames, np.sign(c) / frames,
                          lam * dmu1 / frames, lam * dlb1 / frames,
                          lam * dmu2 / frames, lam * dlb2 / frames))
        if backprop:
            self._backward(outputs, grads)
        return float(total)

    def _encoder_backward(self, cache, mu, lb, z, dz, dmu_kl, dlb_kl):
        # z = mu + b*e with e independent of (mu, log_b): dz/dlog_b = z - mu.
        dmu = dz + dmu_kl
        dlb = dz * (z - mu) + dlb_kl
        dctx = self.encoder.backward(cache, np.concatenate([dmu, dlb], axis=-1).astype(self.dtype))
        return context_frames_backward(dctx, self.cfg.context_window, self.cfg.mcep_dim)

    def _backward(self, outputs, grads):
        L = self.cfg.latent_dim
        d_next = None
        for k in reversed(range(len(outputs.tape))):
            t = outputs.tape[k]
            g_rec, g_cyc, dmu1, dlb1, dmu2, dlb2 = grads[k]
            d_yc = np.zeros_like(outputs.conv[k]) if d_next is None else d_next
            d_in2 = self.decoder.backward(t["dec_cyc"], g_cyc.astype(self.dtype))
            d_yc = d_yc + self._encoder_backward(t["enc2"], t["mu2"], t["lb2"], t["z2"],
                                                 d_in2[..., :L], dmu2, dlb2)
            dz = self.decoder.backward(t["dec_c"], d_yc.astype(self.dtype))[..., :L]
            dz = dz + self.decoder.backward(t["dec_r"], g_rec.astype(self.dtype))[..., :L]
            d_next = self._encoder_backward(t["enc"], t["mu"], t["lb"], t["z"], dz, dmu1, dlb1)

    # -- inference ------------------------------------------------------------
    def convert_normalized(self, xn, tgt_idx):
        mu, _, _ = self.encode(context_frames(xn, self.cfg.context_window))
        y, _ = self.decode(mu, self.codes(tgt_idx, xn.shape[:-1]))
        return y

    def convert_mcep(self, mcep, tgt_speaker):
        """Convert a raw mel-cepstral sequence to ``tgt_speaker`` using the posterior mean."""
        mcep = np.atleast_2d(np.asarray(mcep))
        if mcep.shape[-1] != self.cfg.mcep_dim:
            raise DimensionError(f"expected {self.cfg.mcep_dim} coefficients, got {mcep.shape[-1]}")
        idx = self.inventory.idx(tgt_speaker)
        if len(mcep) == 0:
            return np.zeros((0, self.cfg.mcep_dim))
        return self.denormalize(self.convert_normalized(self.normalize(mcep), idx))

    def reconstruct_mcep(self, mcep, speaker):
        return self.convert_mcep(mcep, speaker)

    # -- persistence ------------------------------------------------------------
    def meta(self):
        return {"model": "cyclevae", "config": self.cfg.to_dict(), "speakers": self.inventory.speakers,
                "norm_mean": self.mean.tolist(), "norm_std": self.std.tolist()}

    def save(self, path, step=None):
        return save_checkpoint(path, self.params(), self.layer_table(), self.meta(), step)

    @classmethod
    def load(cls, path, dtype=np.float32):
        ck = load_checkpoint(path)
        if ck.meta.get("model") != "cyclevae":
            raise InputError(f"{path} is not a CycleVAE checkpoint")
        model = cls(CycleVaeConfig.from_dict(ck.meta["config"]), ck.meta["speakers"],
                    ck.meta["norm_mean"], ck.meta["norm_std"], dtype=dtype)
        ck.load_into(model.params(), with_state=False)
        return model


def fit_normalizer(mceps):
    data = np.concatenate([np.asarray(m, dtype=np.float64) for m in mceps])
    std = data.std(axis=0)
    return data.mean(axis=0), np.where(std > 1e-8, std, 1.0)


def mel_cepstral_distance(a, b):
    """Mean mel-cepstral distortion in dB, excluding the power coefficient."""
    d = np.asarray(a, dtype=np.float64)[..., 1:] - np.asarray(b, dtype=np.float64)[..., 1:]
    return float(np.mean(10.0 / np.log(10.0) * np.sqrt(2.0 * np.sum(d * d, axis=-1))))


def _segments(utts, n, length, rng):
    """Draw ``n`` random (utterance index, start) windows of ``length`` frames."""
    lens = np.array([len(u) for u in utts])
    weights = np.maximum(lens - length + 1, 1).astype(np.float64)
    pick = rng.choice(len(utts), size=n, p=weights / weights.sum())
    starts = [int(rng.integers(0, max(lens[i] - length, 0) + 1)) for i in pick]
    return pick, starts


def dev_l1(model: CycleVAE, utts, speaker_idx):
    """Mean per-frame L1 reconstruction (posterior mean, own speaker) on normalized data."""
    total, frames = 0.0, 0
    for xn, s in zip(utts, speaker_idx):
        y = model.convert_normalized(xn, s)
        total += float(np.abs(y - xn).sum())
        frames += len(xn)
    return total / max(frames, 1)


@dataclass
class TrainResult:
    model: CycleVAE
    train_loss: list
    dev_loss: list
    best_epoch: int
    initial_dev_loss: float


def train(corpus, cfg: CycleVaeConfig, epochs, dev=None, speakers=None, seed=0, log_every=1):
    """Train on ``corpus``: a list of ``(speaker_id, mcep array)`` utterances.

    Conversion targets are drawn uniformly among the other speakers for each
    segment (the speaker itself when the inventory has one entry). Returns
    the model restored to its best dev-loss epoch (last epoch without dev).
    """
    if not corpus:
        raise InputError("empty training corpus")
    speakers = speakers or sorted({s for s, _ in corpus})
    mean, std = fit_normalizer([m for _, m in corpus])
    model = CycleVAE(cfg, speakers, mean, std, seed=seed)
    inv = model.inventory
    rng = np.random.default_rng(seed)
    utts = [model.normalize(m) for _, m in corpus]
    spk = np.array([inv.idx(s) for s, _ in corpus])
    dev = dev or []
    dev_utts = [model.normalize(m) for _, m in dev]
    dev_spk = [inv.idx(s) for s, _ in dev]

    seg = cfg.segment_frames
    n_frames = sum(len(u) for u in utts)
    steps = max(1, n_frames // (cfg.batch_segments * seg))
    opt = Adam(model.params(), lr=cfg.lr, clip=cfg.grad_clip)
    history, dev_hist = [], []
    init_dev = dev_l1(model, dev_utts, dev_spk) if dev_utts else float("nan")
    best, best_epoch, best_params = np.inf, -1, None
    n_spk = len(inv)
    for epoch in range(epochs):
        losses = []
        for _ in range(steps):
            pick, starts = _segments(utts, cfg.batch_segments, seg, rng)
            x = np.stack([_window(utts[i], s, seg) for i, s in zip(pick, starts)])
            src = spk[pick]
            if n_spk > 1:
                off = rng.integers(1, n_spk, size=len(src))
                tgt = (src + off) % n_spk
            else:
                tgt = src.copy()
            out = model.cycle_forward(x, src, tgt, rng)
            losses.append(model.loss(out, x, backprop=True))
            opt.step()
        history.append(float(np.mean(losses)))
        score = dev_l1(model, dev_utts, dev_spk) if dev_utts else history[-1]
        dev_hist.append(score)
        if score < best:
            best, best_epoch = score, epoch
            best_params = [p.value.copy() for p in model.params()]
        if log_every and epoch % log_every == 0:
            log.info("cyclevae epoch %d loss %.4f dev %.4f", epoch, history[-1], score)
    for p, v in zip(model.params(), best_params):
        p.value = v
    return TrainResult(model, history, dev_hist, best_epoch, init_dev)


def _window(u, start, length):
    w = u[start:start + length]
    if len(w) < length:
        w = np.concatenate([w, np.repeat(w[-1:], length - len(w), axis=0)])
    return w
