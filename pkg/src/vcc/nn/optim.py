"""Adam optimizer and central-difference gradient checking."""
from __future__ import annotations

import numpy as np


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=1):
    """Apply one bias-corrected Adam update at timestep ``step`` and zero grads."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p in params:
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * g * g
        update = lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.value -= update.astype(p.value.dtype, copy=False)
        p.zero_grad()


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip = clip
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params))
            if norm > self.clip:
                for p in self.params:
                    p.grad *= self.clip / norm
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)


def grad_check(loss_fn, params, epsilon=1e-5, n_checks=40, seed=0):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(backprop)`` returns the scalar loss; with ``backprop=True`` it
    must also accumulate gradients into ``params``. A random subsample of
    ``n_checks`` entries per parameter tensor is compared. Parameters must
    be float64.
    """
    for p in params:
        if p.value.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters, {p.name} is {p.value.dtype}")
        p.zero_grad()
    loss_fn(True)
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_checks, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(False)
            flat[i] = orig - epsilon
            down = loss_fn(False)
            flat[i] = orig
            num = (up - down) / (2 * epsilon)
            ana = g.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst


def check_network(net, x, seed=0, **kw):
    """grad_check of ``net`` under a fixed random linear readout loss."""
    y = net(x)
    proj = np.random.default_rng(seed + 1).standard_normal(y.shape)

    def loss_fn(backprop):
        out, cache = net.forward(x)
        if backprop:
            net.backward(cache, proj)
        return float(np.sum(out * proj))

    return grad_check(loss_fn, net.params(), seed=seed, **kw)
