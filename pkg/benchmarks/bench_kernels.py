"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Both backends get identical
inputs; the script checks their outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from vcc import _pykernels
from vcc.vocoder import ARVocoder, VocoderConfig

try:
    from vcc import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def bench_wsola(repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(48000)
    ref = x[20000:20320] + 0.05 * rng.standard_normal(320)
    calls = [(int(lo), ref) for lo in rng.integers(0, 47000 - 320 - 160, 200)]

    def run(mod):
        return [mod.wsola_search(x, r, lo, lo + 160) for lo, r in calls]

    return "wsola_search (200 searches, 320-sample window, 161 offsets)", run, repeats


def bench_generate(repeats, n_samples):
    cfg = VocoderConfig(residual_channels=32, skip_channels=32, dilations=tuple(2 ** i for i in range(10)))
    model = ARVocoder(cfg, 60, seed=0)
    rng = np.random.default_rng(1)
    model.out2.w.value = rng.normal(0, 0.3, model.out2.w.value.shape).astype(model.dtype)
    weights = model.kernel_weights()
    cond = rng.standard_normal((n_samples, 60))
    uniforms = rng.random(n_samples)

    def run(mod):
        return np.asarray(mod.ar_generate(*weights, cond, uniforms, 128))

    return f"ar_generate ({n_samples} samples, 10 layers, 32 channels)", run, repeats


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--samples", type=int, default=4000, help="samples generated per ar_generate call")
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
    for label, run, repeats in (bench_wsola(args.repeats), bench_generate(args.repeats, args.samples)):
        t_py, out_py = best_of(lambda: run(_pykernels), repeats)
        line = f"{label}\n  numpy   {t_py * 1e3:9.1f} ms"
        if _ckernels is not None:
            t_c, out_c = best_of(lambda: run(_ckernels), repeats)
            same = np.array_equal(np.asarray(out_py), np.asarray(out_c))
            line += f"\n  cython  {t_c * 1e3:9.1f} ms  speedup {t_py / t_c:5.1f}x  outputs equal: {same}"
        print(line)


if __name__ == "__main__":
    main()
