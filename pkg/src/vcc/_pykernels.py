"""Numpy implementations of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def wsola_search(x, ref, lo, hi):
    """Start index in [lo, hi] maximizing normalized cross-correlation with ref."""
    n = len(ref)
    if n == 0:
        return lo
    win = np.lib.stride_tricks.sliding_window_view(x[lo:hi + n], n)
    num = win @ ref
    energy = np.einsum("ij,ij->i", win, win)
    return lo + int(np.argmax(num / np.sqrt(energy + 1e-12)))


def ar_generate(embed, embed_b, conv_w0, conv_w1, conv_b, cond_w, res_w, res_b,
                skip_w, skip_b, out_w1, out_b1, out_w2, out_b2, dilations, cond,
                uniforms, init_code):
    """Sample codes one at a time from the gated dilated-conv AR network."""
    n_layers, r = conv_w0.shape[0], conv_w0.shape[1]
    n_steps = cond.shape[0]
    ring = int(max(dilations, default=1)) + 1
    hist = np.zeros((n_layers, ring, r))
    # Conditioning enters every layer linearly, so project it once up front.
    cond_z = np.einsum("td,ldj->ltj", cond, cond_w) + conv_b[:, None, :]
    codes = np.zeros(n_steps, dtype=np.int64)
    prev = int(init_code)
    for t in range(n_steps):
        h = embed[prev] + embed_b
        skip = np.zeros(skip_w.shape[2])
        slot = t % ring
        for l in range(n_layers):
            hist[l, slot] = h
            z = h @ conv_w0[l] + cond_z[l, t]
            past = t - dilations[l]
            if past >= 0:
                z = z + hist[l, past % ring] @ conv_w1[l]
            g = np.tanh(z[:r]) / (1.0 + np.exp(-z[r:]))
            skip = skip + g @ skip_w[l] + skip_b[l]
            h = h + g @ res_w[l] + res_b[l]
        hid = np.maximum(np.maximum(skip, 0.0) @ out_w1 + out_b1, 0.0)
        logits = hid @ out_w2 + out_b2
        p = np.exp(logits - logits.max())
        cdf = np.cumsum(p)
        prev = int(min(np.searchsorted(cdf, uniforms[t] * cdf[-1], side="right"), len(p) - 1))
        codes[t] = prev
    return codes
