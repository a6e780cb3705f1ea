"""Axial multi-head self-attention and the cross-attention skip gate.

Feature maps are (N, C, T, F).  Axial attention treats every frequency row
(time axis) or every frame (frequency axis) as an independent sequence.
"""
from __future__ import annotations

import logging

import numpy as np

from . import tensor as tt
from .tensor import ShapeError, Tensor
from .tensor.nn import Conv2d, Module, parameter, uniform_fan_in

log = logging.getLogger(__name__)

SCALES = ("none", "len", "dk")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, scale_len: int | None = None) -> Tensor:
    """``softmax(Q K^T / sqrt(L)) V`` with the softmax over keys; L defaults to the sequence length."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key feature sizes differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2] or q.shape[-2] != k.shape[-2]:
        raise ShapeError(f"sequence lengths differ: {q.shape}, {k.shape}, {v.shape}")
    length = q.shape[-2] if scale_len is None else scale_len
    logits = tt.matmul(q, tt.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(length))
    return tt.matmul(tt.softmax(logits, -1), v)


def relative_index(length: int, span: int):
    """Offset bookkeeping for a window of ``|c - p| < span`` on a length-``length`` sequence.

    Returns ``(idx, mask, gather, gather_mask)``: ``idx[p, c]`` is the table row
    for offset ``c - p`` (clipped), ``mask`` marks in-window pairs,
    ``gather[p, d]`` is the key position for table row ``d`` and
    ``gather_mask`` marks rows that land inside the sequence.
    """
    pos = np.arange(length)
    rel = pos[None, :] - pos[:, None]
    mask = np.abs(rel) < span
    idx = np.clip(rel + span - 1, 0, 2 * span - 2)
    key = pos[:, None] + np.arange(2 * span - 1)[None, :] - (span - 1)
    gather_mask = (key >= 0) & (key < length)
    return idx, mask, np.clip(key, 0, length - 1), gather_mask


def positional_head(q: Tensor, k: Tensor, v: Tensor, r_q: Tensor, r_k: Tensor, r_v: Tensor,
                    span: int, value_sign: float = -1.0, scale: float | None = None) -> Tensor:
    """Windowed attention with query-, key- and value-side relative position terms.

    For position p the output is
    ``sum_c softmax_c(q_p.k_c + q_p.rq[c-p] + k_c.rk[c-p]) * (v_c + value_sign * rv[c-p])``
    over keys with ``|c - p| < span``.  ``value_sign=-1`` subtracts the value
    term.  ``scale`` optionally multiplies the logits.
    """
    length = q.shape[-2]
    if r_q.shape[0] != 2 * span - 1 or r_k.shape[0] != 2 * span - 1 or r_v.shape[0] != 2 * span - 1:
        raise ShapeError(f"positional tables need {2 * span - 1} offset rows for span {span}")
    if span > length:
        log.debug("span %d exceeds sequence length %d; clamping window", span, length)
        lo = span - length
        r_q, r_k, r_v = (r[lo:lo + 2 * length - 1] for r in (r_q, r_k, r_v))
        span = length
    idx, mask, gather, gather_mask = relative_index(length, span)
    dt = q.dtype
    logits = tt.matmul(q, tt.swapaxes(k, -1, -2))
    logits = logits + tt.take_along_last(tt.matmul(q, tt.swapaxes(r_q, 0, 1)), idx)
    logits = logits + tt.swapaxes(tt.take_along_last(tt.matmul(k, tt.swapaxes(r_k, 0, 1)), idx.T), -1, -2)
    if scale is not None:
        logits = logits * scale
    logits = logits + Tensor(np.where(mask, 0.0, -np.inf), dtype=dt)
    attn = tt.softmax(logits, -1)
    out = tt.matmul(attn, v)
    by_offset = tt.take_along_last(attn, gather) * Tensor(gather_mask, dtype=dt)
    return out + tt.matmul(by_offset, r_v) * value_sign


class AxialAttention(Module):
    """Multi-head attention along one axis of an (N, C, T, F) map."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int = 4, span: int = 7,
                 axis: str = "time", value_sign: float = -1.0, scale: str = "none"):
        if channels % heads:
            raise ValueError(f"{channels} channels not divisible by {heads} heads")
        if axis not in ("time", "frequency"):
            raise ValueError(f"axis must be 'time' or 'frequency', got {axis!r}")
        if scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {scale!r}")
        self.axis, self.heads, self.span = axis, heads, span
        self.value_sign, self.scale = float(value_sign), scale
        dk = dv = channels // heads
        self.dk, self.dv = dk, dv
        self.w_q = parameter(uniform_fan_in(rng, (channels, heads * dk), channels))
        self.w_k = parameter(uniform_fan_in(rng, (channels, heads * dk), channels))
        self.w_v = parameter(uniform_fan_in(rng, (channels, heads * dv), channels))
        self.w_o = parameter(uniform_fan_in(rng, (heads * dv, channels), heads * dv))
        rows = 2 * span - 1
        self.r_q = parameter(0.02 * rng.standard_normal((rows, dk)))
        self.r_k = parameter(0.02 * rng.standard_normal((rows, dk)))
        self.r_v = parameter(0.02 * rng.standard_normal((rows, dv)))

    def _scale(self, length: int) -> float | None:
        if self.scale == "len":
            return 1.0 / np.sqrt(length)
        if self.scale == "dk":
            return 1.0 / np.sqrt(self.dk)
        return None

    def forward(self, x: Tensor) -> Tensor:
        n, c, t, f = x.shape
        if c != self.w_q.shape[0]:
            raise ShapeError(f"input has {c} channels, attention expects {self.w_q.shape[0]}")
        h = self.heads
        xl = tt.transpose(x, (0, 2, 3, 1))  # N T F C
        # sequences along the chosen axis: (N, other, heads, length, d)
        order = (0, 2, 3, 1, 4) if self.axis == "time" else (0, 1, 3, 2, 4)
        length = t if self.axis == "time" else f

        def split(w, d):
            return tt.transpose(tt.reshape(tt.matmul(xl, w), (n, t, f, h, d)), order)

        q, k, v = split(self.w_q, self.dk), split(self.w_k, self.dk), split(self.w_v, self.dv)
        heads = positional_head(q, k, v, self.r_q, self.r_k, self.r_v, self.span,
                                self.value_sign, self._scale(length))
        merged = tt.reshape(tt.transpose(heads, tuple(np.argsort(order))), (n, t, f, h * self.dv))
        return tt.transpose(tt.matmul(merged, self.w_o), (0, 3, 1, 2))


class MHSA(Module):
    """Parallel time- and frequency-axial attention, summed with the input, then a 1x1 conv."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int = 4, span: int = 7,
                 value_sign: float = -1.0, scale: str = "none"):
        self.time = AxialAttention(rng, channels, heads, span, "time", value_sign, scale)
        self.freq = AxialAttention(rng, channels, heads, span, "frequency", value_sign, scale)
        self.fuse = Conv2d(rng, channels, channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.fuse(self.time(x) + self.freq(x) + x)


class MHCA(Module):
    """Cross-attention gate for a skip connection.

    Queries come from the decoder feature X, keys and values from the
    encoder feature Y.  Per frame and head, ``P = Q K^T / sqrt(F)`` over
    frequency, the mask normalizes each column (over the query index), and
    ``sigmoid(merge(mask @ V))`` gates X.  Returns ``concat(X * Z, Y)``.
    """

    def __init__(self, rng: np.random.Generator, channels: int, heads: int = 4):
        if channels % heads:
            raise ValueError(f"{channels} channels not divisible by {heads} heads")
        self.heads = heads
        self.query = Conv2d(rng, channels, channels)
        self.key = Conv2d(rng, channels, channels)
        self.value = Conv2d(rng, channels, channels)
        self.merge = Conv2d(rng, channels, channels)

    def _split(self, z: Tensor) -> Tensor:
        n, c, t, f = z.shape
        h = self.heads
        return tt.transpose(tt.reshape(z, (n, h, c // h, t, f)), (0, 1, 3, 4, 2))

    def gate(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        """Return the gate Z (N, C, T, F) and the attention mask (N, heads, T, F, F)."""
        if x.shape != y.shape:
            raise ShapeError(f"skip features misaligned: decoder {x.shape} vs encoder {y.shape}")
        n, c, t, f = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(y)), self._split(self.value(y))
        p = tt.matmul(q, tt.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(f))
        mask = tt.softmax(p, -2)
        a = tt.matmul(mask, v)  # N h T F d
        a = tt.reshape(tt.transpose(a, (0, 1, 4, 2, 3)), (n, c, t, f))
        return tt.sigmoid(self.merge(a)), mask

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        z, _ = self.gate(x, y)
        return tt.concat([x * z, y], axis=1)
