"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, backward


def numeric_gradient(f, param, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every coordinate of ``param``.

    ``f`` must be deterministic and must read ``param.data`` live; the data
    is perturbed in place and restored.
    """
    flat = param.data.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.data.shape)


def grad_check(f, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params``. The relative error of each coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, params=params)
    worst = 0.0
    for p in params:
        analytic = grads[p]
        numeric = numeric_gradient(f, p, h)
        denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        err = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
        worst = max(worst, err)
    return worst
