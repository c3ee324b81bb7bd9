# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``vcc._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()


def wsola_search(const double[::1] x, const double[::1] ref, Py_ssize_t lo, Py_ssize_t hi):
    """Start index in [lo, hi] maximizing normalized cross-correlation with ref."""
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t s, j, best = lo
    cdef double num, energy, score, best_score = -1e300
    if n == 0:
        return lo
    for s in range(lo, hi + 1):
        num = 0.0
        energy = 0.0
        for j in range(n):
            num += x[s + j] * ref[j]
            energy += x[s + j] * x[s + j]
        score = num / sqrt(energy + 1e-12)
        if score > best_score:
            best_score = score
            best = s
    return best


def ar_generate(const double[:, ::1] embed, const double[::1] embed_b,
                const double[:, :, ::1] conv_w0, const double[:, :, ::1] conv_w1,
                const double[:, ::1] conv_b, const double[:, :, ::1] cond_w,
                const double[:, :, ::1] res_w, const double[:, ::1] res_b,
                const double[:, :, ::1] skip_w, const double[:, ::1] skip_b,
                const double[:, ::1] out_w1, const double[::1] out_b1,
                const double[:, ::1] out_w2, const double[::1] out_b2,
                const long[::1] dilations, const double[:, ::1] cond,
                const double[::1] uniforms, long init_code):
    """Sample codes one at a time from the gated dilated-conv AR network."""
    cdef Py_ssize_t n_layers = conv_w0.shape[0]
    cdef Py_ssize_t r = conv_w0.shape[1]
    cdef Py_ssize_t s_ch = skip_w.shape[2]
    cdef Py_ssize_t q = out_w2.shape[1]
    cdef Py_ssize_t n_steps = cond.shape[0]
    cdef Py_ssize_t t, l, i, j, slot, past, max_d = 1
    for l in range(n_layers):
        if dilations[l] > max_d:
            max_d = dilations[l]
    cdef Py_ssize_t ring = max_d + 1

    codes_arr = np.zeros(n_steps, dtype=np.int64)
    cdef long[::1] codes = codes_arr
    hist_arr = np.zeros((n_layers, ring, r))
    cdef double[:, :, ::1] hist = hist_arr
    # Conditioning enters every layer linearly, so project it once with BLAS.
    cond_z_arr = np.ascontiguousarray(np.matmul(np.asarray(cond), np.asarray(cond_w))
                                      + np.asarray(conv_b)[:, None, :])
    cdef double[:, :, ::1] cond_z = cond_z_arr
    cdef double[::1] h = np.zeros(r)
    cdef double[::1] z = np.zeros(2 * r)
    cdef double[::1] g = np.zeros(r)
    cdef double[::1] skip = np.zeros(s_ch)
    cdef double[::1] hid = np.zeros(s_ch)
    cdef double[::1] logits = np.zeros(q)
    cdef long prev = init_code
    cdef double acc, mx, total, target, gate, v
    cdef Py_ssize_t r2 = 2 * r
    cdef const double* w
    cdef const double* w2
    cdef double* zp = &z[0]
    cdef double* hp = &h[0]
    cdef double* sp = &skip[0]
    cdef double* hidp = &hid[0]
    cdef double* lp = &logits[0]

    for t in range(n_steps):
        for i in range(r):
            h[i] = embed[prev, i] + embed_b[i]
        for i in range(s_ch):
            skip[i] = 0.0
        slot = t % ring
        for l in range(n_layers):
            for i in range(r):
                hist[l, slot, i] = h[i]
            past = t - dilations[l]
            for j in range(2 * r):
                z[j] = cond_z[l, t, j]
            w = &conv_w0[l, 0, 0]
            for i in range(r):
                v = hp[i]
                for j in range(r2):
                    zp[j] += v * w[i * r2 + j]
            if past >= 0:
                w = &conv_w1[l, 0, 0]
                for i in range(r):
                    v = hist[l, past % ring, i]
                    for j in range(r2):
                        zp[j] += v * w[i * r2 + j]
            for i in range(r):
                gate = 1.0 / (1.0 + exp(-z[r + i]))
                g[i] = tanh(z[i]) * gate
            for j in range(s_ch):
                skip[j] += skip_b[l, j]
            for j in range(r):
                h[j] += res_b[l, j]
            w = &skip_w[l, 0, 0]
            w2 = &res_w[l, 0, 0]
            for i in range(r):
                v = g[i]
                for j in range(s_ch):
                    sp[j] += v * w[i * s_ch + j]
                for j in range(r):
                    hp[j] += v * w2[i * r + j]
        for j in range(s_ch):
            hid[j] = out_b1[j]
        w = &out_w1[0, 0]
        for i in range(s_ch):
            if sp[i] > 0:
                v = sp[i]
                for j in range(s_ch):
                    hidp[j] += v * w[i * s_ch + j]
        for j in range(s_ch):
            if hid[j] < 0:
                hid[j] = 0.0
        for j in range(q):
            logits[j] = out_b2[j]
        w = &out_w2[0, 0]
        for i in range(s_ch):
            v = hidp[i]
            if v != 0.0:
                for j in range(q):
                    lp[j] += v * w[i * q + j]
        mx = -1e300
        for j in range(q):
            if logits[j] > mx:
                mx = logits[j]
        total = 0.0
        for j in range(q):
            logits[j] = exp(logits[j] - mx)
            total += logits[j]
        target = uniforms[t] * total
        acc = 0.0
        prev = q - 1
        for j in range(q):
            acc += logits[j]
            if acc > target:
                prev = j
                break
        codes[t] = prev
    return codes_arr
