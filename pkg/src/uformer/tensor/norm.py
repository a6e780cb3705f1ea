from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, Tensor, _make, as_tensor


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels, dtype=np.float32), np.ones(channels, dtype=np.float32))


def batch_norm(x, gamma, beta, running: RunningStats, training: bool,
               eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over the N, T, F axes of an (N, C, T, F) input.

    In training mode the running statistics are updated in place
    (unbiased variance, exponential moving average with ``momentum``).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels vs gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3)
    bshape = (1, c, 1, 1)
    data = x.data
    if training:
        mu = data.mean(axis=axes)
        var = data.var(axis=axes)
        m = data.size // c
        unbiased = var * m / max(m - 1, 1)
        running.mean[...] = (1 - momentum) * running.mean + momentum * mu
        running.var[...] = (1 - momentum) * running.var + momentum * unbiased
    else:
        mu, var = running.mean.astype(data.dtype), running.var.astype(data.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def grad_fn(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            m = data.size // c
            gx = inv.reshape(bshape) / m * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return _make(out, "batch_norm", (x, gamma, beta), grad_fn)
