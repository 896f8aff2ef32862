"""Optimizers, gradient clipping, and the stepwise learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class Adam:
    """Bias-corrected Adam.

    Defaults follow the experiment setup: beta1 = 0 (so the corrected first
    moment equals the raw gradient), beta2 = 0.999, lr 0.003, and weight
    decay 1e-6 applied as an additive decay * theta gradient term.
    """

    def __init__(self, params, lr=0.003, betas=(0.0, 0.999), eps=1e-8,
                 weight_decay=1e-6):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p: np.zeros_like(p.data) for p in self.params}
        self.v = {p: np.zeros_like(p.data) for p in self.params}

    def step(self, grads, lr=None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p in self.params:
            g = grads[p]
            if g.shape != p.data.shape:
                raise ShapeError(f"adam: gradient {g.shape} vs parameter {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[p] = b1 * self.m[p] + (1.0 - b1) * g
            v = self.v[p] = b2 * self.v[p] + (1.0 - b2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=0.001, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, grads, lr=None) -> None:
        lr = self.lr if lr is None else lr
        for p in self.params:
            g = grads[p]
            if g.shape != p.data.shape:
                raise ShapeError(f"sgd: gradient {g.shape} vs parameter {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data = p.data - lr * g


def global_norm(grads) -> float:
    values = grads.values() if isinstance(grads, dict) else grads
    return float(np.sqrt(sum(float((g * g).sum()) for g in values)))


def clip_global_norm(grads, max_norm: float):
    """Scale all gradients so their joint norm is at most ``max_norm``.

    Returns (grads, pre-clip norm); the direction is unchanged.
    """
    if max_norm <= 0:
        raise ValueError("clip_global_norm: max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        if isinstance(grads, dict):
            grads = {k: g * scale for k, g in grads.items()}
        else:
            grads = [g * scale for g in grads]
    return grads, norm


class Schedule:
    """Piecewise-constant rate: divide by ``factor`` at each cut epoch."""

    def __init__(self, base: float, cuts=(100, 160), factor: float = 10.0):
        self.base = base
        self.cuts = tuple(sorted(cuts))
        self.factor = factor

    def rate(self, epoch: int) -> float:
        drops = sum(1 for c in self.cuts if epoch >= c)
        return self.base / self.factor**drops


def make_optimizer(kind, params, lr, betas=(0.0, 0.999), eps=1e-8, weight_decay=1e-6):
    if kind == "adam":
        return Adam(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
