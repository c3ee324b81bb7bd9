"""Layers with explicit forward/backward passes.

Every layer returns ``(y, cache)`` from ``forward`` and accumulates parameter
gradients in ``backward(cache, dy)``, which returns the input gradient.
Caches are per call, so one layer may appear several times in a graph
(the CycleVAE encoder is applied to both inputs and converted frames).

Sequence layers take ``(T, C)`` or ``(B, T, C)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NumericError


class Param:
    """A parameter tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "adam_m", "adam_v", "name")

    def __init__(self, value, name=""):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    kernel: int = 1
    dilation: int = 1

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise DimensionError(f"{self.kind}: dims must be positive")
        if self.dilation < 1 or self.kernel < 1:
            raise DimensionError(f"{self.kind}: kernel and dilation must be >= 1")


def _glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _check_last(x, dim, who):
    if x.shape[-1] != dim:
        raise DimensionError(f"{who}: expected last dim {dim}, got shape {x.shape}")


class Layer:
    spec: LayerSpec

    def params(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)[0]


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32, zero=False, name="dense"):
        self.spec = LayerSpec("dense", in_dim, out_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        w = np.zeros((in_dim, out_dim), dtype) if zero else _glorot(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        self.w = Param(w, f"{name}.w")
        self.b = Param(np.zeros(out_dim, dtype), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        _check_last(x, self.spec.in_dim, "dense")
        return x @ self.w.value + self.b.value, x

    def backward(self, x, dy):
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.w.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.w.value.T


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Embedding(Layer):
    """Row lookup for integer codes, i.e. a dense layer on one-hot inputs."""

    def __init__(self, n_codes, dim, rng=None, dtype=np.float32, name="embed"):
        self.spec = LayerSpec("embedding", n_codes, dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Param(rng.normal(0, 1.0 / np.sqrt(dim), (n_codes, dim)).astype(dtype), f"{name}.w")
        self.b = Param(np.zeros(dim, dtype), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def forward(self, codes):
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.spec.in_dim):
            raise DimensionError(f"codes must lie in [0, {self.spec.in_dim})")
        return self.w.value[codes] + self.b.value, codes

    def backward(self, codes, dy):
        np.add.at(self.w.grad, codes.reshape(-1), dy.reshape(-1, dy.shape[-1]))
        self.b.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return None


class Activation(Layer):
    KINDS = ("tanh", "sigmoid", "relu", "identity")

    def __init__(self, kind, dim=1):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.spec = LayerSpec("activation", dim, dim)

    def forward(self, x):
        if self.kind == "tanh":
            y = np.tanh(x)
        elif self.kind == "sigmoid":
            y = sigmoid(x)
        elif self.kind == "relu":
            y = np.maximum(x, 0)
        else:
            y = x
        return y, (x, y)

    def backward(self, cache, dy):
        x, y = cache
        if self.kind == "tanh":
            return dy * (1 - y * y)
        if self.kind == "sigmoid":
            return dy * y * (1 - y)
        if self.kind == "relu":
            return dy * (x > 0)
        return dy


def _as_batch(x):
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise DimensionError(f"sequence input must be (T, C) or (B, T, C), got {x.shape}")
    return x, False


class CausalConv(Layer):
    """``y[t] = b + sum_k x[t - k*dilation] @ w[k]`` with zeros before t=0."""

    def __init__(self, in_dim, out_dim, kernel=2, dilation=1, rng=None, dtype=np.float32, name="conv"):
        self.spec = LayerSpec("causal_conv", in_dim, out_dim, kernel, dilation)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Param(_glorot(rng, in_dim * kernel, out_dim, (kernel, in_dim, out_dim), dtype), f"{name}.w")
        self.b = Param(np.zeros(out_dim, dtype), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        _check_last(x, self.spec.in_dim, "causal_conv")
        xb, squeeze = _as_batch(x)
        T = xb.shape[1]
        d = self.spec.dilation
        y = np.broadcast_to(self.b.value, xb.shape[:2] + (self.spec.out_dim,)).copy()
        for k in range(self.spec.kernel):
            s = k * d
            if s < T:
                y[:, s:] += xb[:, :T - s] @ self.w.value[k]
        return (y[0] if squeeze else y), (xb, squeeze)

    def backward(self, cache, dy):
        xb, squeeze = cache
        dyb = dy[None] if squeeze else dy
        T = xb.shape[1]
        d = self.spec.dilation
        dx = np.zeros_like(xb)
        self.b.grad += dyb.sum(axis=(0, 1))
        for k in range(self.spec.kernel):
            s = k * d
            if s < T:
                xs = xb[:, :T - s].reshape(-1, xb.shape[-1])
                ds = dyb[:, s:].reshape(-1, dyb.shape[-1])
                self.w.grad[k] += xs.T @ ds
                dx[:, :T - s] += dyb[:, s:] @ self.w.value[k].T
        return dx[0] if squeeze else dx


class GRU(Layer):
    """Gated recurrent layer run over a sequence from a zero initial state.

    ``n = tanh(x Wn + bn + r * (h Un + bhn))``, ``h' = (1 - z) n + z h``.
    """

    def __init__(self, in_dim, hidden, rng=None, dtype=np.float32, name="gru"):
        self.spec = LayerSpec("gru_cell", in_dim, hidden)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.wx = Param(_glorot(rng, in_dim, hidden, (in_dim, 3 * hidden), dtype), f"{name}.wx")
        self.wh = Param(_glorot(rng, hidden, hidden, (hidden, 3 * hidden), dtype), f"{name}.wh")
        self.bx = Param(np.zeros(3 * hidden, dtype), f"{name}.bx")
        self.bh = Param(np.zeros(3 * hidden, dtype), f"{name}.bh")

    def params(self):
        return [self.wx, self.wh, self.bx, self.bh]

    def forward(self, x):
        _check_last(x, self.spec.in_dim, "gru_cell")
        xb, squeeze = _as_batch(x)
        B, T, _ = xb.shape
        H = self.spec.out_dim
        gx = xb @ self.wx.value + self.bx.value
        h = np.zeros((B, H), dtype=xb.dtype)
        hs, steps = [], []
        for t in range(T):
            gh = h @ self.wh.value + self.bh.value
            z = sigmoid(gx[:, t, :H] + gh[:, :H])
            r = sigmoid(gx[:, t, H:2 * H] + gh[:, H:2 * H])
            n = np.tanh(gx[:, t, 2 * H:] + r * gh[:, 2 * H:])
            steps.append((h, z, r, n, gh[:, 2 * H:]))
            h = (1 - z) * n + z * h
            hs.append(h)
        y = np.stack(hs, axis=1)
        return (y[0] if squeeze else y), (xb, steps, squeeze)

    def backward(self, cache, dy):
        xb, steps, squeeze = cache
        dyb = dy[None] if squeeze else dy
        B, T, _ = xb.shape
        H = self.spec.out_dim
        dgx = np.zeros((B, T, 3 * H), dtype=xb.dtype)
        dh_next = np.zeros((B, H), dtype=xb.dtype)
        for t in reversed(range(T)):
            h_prev, z, r, n, ghn = steps[t]
            dh = dyb[:, t] + dh_next
            dn = dh * (1 - z) * (1 - n * n)
            dz = dh * (h_prev - n) * z * (1 - z)
            dr = dn * ghn * r * (1 - r)
            dgh = np.concatenate([dz, dr, dn * r], axis=1)
            dgx[:, t] = np.concatenate([dz, dr, dn], axis=1)
            self.wh.grad += h_prev.T @ dgh
            self.bh.grad += dgh.sum(axis=0)
            dh_next = dh * z + dgh @ self.wh.value.T
        self.wx.grad += xb.reshape(-1, xb.shape[-1]).T @ dgx.reshape(-1, 3 * H)
        self.bx.grad += dgx.sum(axis=(0, 1))
        dx = dgx @ self.wx.value.T
        return dx[0] if squeeze else dx


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)
        self.spec = LayerSpec("sequential", self.layers[0].spec.in_dim, self.layers[-1].spec.out_dim)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        caches = []
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {i} ({layer.spec.kind})", i)
            caches.append(c)
        return x, caches

    def backward(self, caches, dy):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(c, dy)
        return dy

    def layer_table(self):
        return [layer.spec for layer in self.layers]


def mlp(sizes, activation="tanh", rng=None, dtype=np.float32, zero_last=False, name="mlp"):
    """Dense stack with ``activation`` between layers and a linear output."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(Dense(a, b, rng, dtype, zero=zero_last and last, name=f"{name}.{i}"))
        if not last:
            layers.append(Activation(activation, b))
    return Sequential(layers)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean negative log-likelihood over rows and its gradient w.r.t. logits.

    ``weights`` (0/1 per row) excludes rows from the mean.
    """
    flat = logits.reshape(-1, logits.shape[-1])
    t = np.asarray(targets).reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    nll = logz - z[np.arange(len(t)), t]
    wts = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    count = max(wts.sum(), 1.0)
    loss = float((nll * wts).sum() / count)
    grad = np.exp(z - logz[:, None])
    grad[np.arange(len(t)), t] -= 1.0
    grad *= (wts / count)[:, None]
    return loss, grad.reshape(logits.shape).astype(logits.dtype, copy=False)


def receptive_field(dilations, kernel=2) -> int:
    """Number of input samples that can reach one output of a dilated stack."""
    dilations = list(dilations)
    if not dilations:
        raise ValueError("dilation list must be nonempty")
    return 1 + sum((kernel - 1) * d for d in dilations)
