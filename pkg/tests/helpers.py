"""Signal builders shared by the test modules."""
import numpy as np

from vcc.signal_io import Waveform


def sine(freq, seconds=1.0, rate=16000, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), rate)


def noise(seconds=1.0, rate=16000, amp=0.3, seed=0):
    x = np.random.default_rng(seed).normal(0, amp, int(round(seconds * rate)))
    return Waveform(np.clip(x, -1, 1), rate)


def voiced_f0(w, cfg):
    from vcc.analysis import estimate_f0

    uv, f0 = estimate_f0(w, cfg)
    return f0[uv > 0], uv


TINY_VOCODER = {"residual_channels": 6, "skip_channels": 6, "dilations": [1, 2, 4], "segment_len": 160,
                "batch_segments": 2, "steps_per_epoch": 2, "dev_max_samples": 800}
TINY_CYCLEVAE = {"latent_dim": 4, "enc_hidden": [16], "dec_hidden": [16], "batch_segments": 4,
                 "segment_frames": 16}


def write_toy_corpus(root, speakers=(("A", 0.0, 130.0), ("B", -1.2, 190.0)), n_utts=3, n_frames=60, seed=0):
    """Render a parallel toy corpus as ``root/<speaker>/uNN.wav``; returns ``{speaker: glob}``."""
    from pathlib import Path

    from vcc import toy
    from vcc.signal_io import write_wav

    spks = [toy.ToySpeaker(s, tilt=t, f0=f) for s, t, f in speakers]
    corpus = toy.make_parallel_corpus(spks, n_utts, n_frames, seed=seed)
    globs = {}
    for spk, seqs in corpus.items():
        d = Path(root) / spk
        d.mkdir(parents=True, exist_ok=True)
        for i, fs in enumerate(seqs):
            write_wav(d / f"u{i:02d}.wav", toy.render(fs, seed=i))
        globs[spk] = f"{spk}/*.wav"
    return globs


def write_config(root, corpus, **extra):
    """Small pipeline config in ``root/config.json`` with paths relative to ``root``."""
    import json
    from pathlib import Path

    cfg = {"corpus": corpus, "work_dir": "work", "seed": 7, "cyclevae": TINY_CYCLEVAE, "vocoder": TINY_VOCODER,
           "cyclevae_epochs": 2, "dev_utts": 1,
           "stage_plan": {"stages": [{"stage": 1, "features": "natural", "speakers": ["*"], "epochs": 1},
                          {"stage": 2, "features": "reconstructed", "speakers": ["*"], "epochs": 1},
                          {"stage": 3, "features": "generated", "speakers": ["*"], "epochs": 2, "patience": 3},
                          {"stage": 4, "features": "generated", "speakers": ["A", "B"], "epochs": 1,
                           "patience": 3, "per_speaker": True}]}}
    cfg.update(extra)
    path = Path(root) / "config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path
