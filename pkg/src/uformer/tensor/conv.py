"""Convolution family built on explicit im2col / col2im.

Layouts follow the usual NCHW convention with H = time, W = frequency:
``conv2d`` weights are (out, in, kT, kF); transposed-convolution weights are
(in, out, kT, kF) so that ``conv_transpose2d(y, w)`` is exactly the
input-gradient map of ``conv2d(x, w)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, _make, as_tensor


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _im2col(xp: np.ndarray, k: tuple[int, int], s: tuple[int, int], out_hw: tuple[int, int]) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*H'*W', C*kT*kF)."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, k, axis=(2, 3))[:, :, ::s[0], ::s[1]]
    win = win[:, :, :out_hw[0], :out_hw[1]]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_hw[0] * out_hw[1], c * k[0] * k[1])


def _col2im(cols: np.ndarray, padded_shape, k, s, out_hw) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back into a padded canvas."""
    n, c, hp, wp = padded_shape
    ho, wo = out_hw
    cols = cols.reshape(n, ho, wo, c, k[0], k[1])
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k[0]):
        for j in range(k[1]):
            out[:, :, i:i + s[0] * (ho - 1) + 1:s[0], j:j + s[1] * (wo - 1) + 1:s[1]] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _check_conv_args(x: Tensor, w: Tensor, in_axis: int, bias, out_ch: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(f"input channels {x.shape[1]} do not match weight {w.shape}")
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} output channels")


def conv2d(x, w, bias=None, stride=1, pad=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output extent per axis is ``floor((n + 2p - k) / s) + 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = None if bias is None else as_tensor(bias)
    s, p = _pair(stride), _pair(pad)
    o, c, kt, kf = w.shape
    _check_conv_args(x, w, 1, bias, o)
    if min(s) < 1:
        raise ValueError(f"strides must be >= 1, got {s}")
    n, _, t, f = x.shape
    if kt > t + 2 * p[0] or kf > f + 2 * p[1]:
        raise ShapeError(f"kernel {(kt, kf)} larger than padded input {(t + 2 * p[0], f + 2 * p[1])}")
    ho, wo = conv_output_size(t, kt, s[0], p[0]), conv_output_size(f, kf, s[1], p[1])
    xp = np.pad(x.data, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1])))
    cols = _im2col(xp, (kt, kf), s, (ho, wo))
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(gmat @ wmat, xp.shape, (kt, kf), s, (ho, wo))
            gx = gxp[:, :, p[0]:p[0] + t, p[1]:p[1] + f]
        if w.requires_grad:
            gw = (gmat.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out, "conv2d", inputs, grad_fn)


def conv_transpose2d(x, w, bias=None, stride=1, pad=0, output_size=None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel, stride and padding.

    ``w`` has shape (in, out, kT, kF).  The natural output extent is
    ``(n - 1) * s - 2p + k``; ``output_size`` may request up to ``s - 1``
    extra trailing samples per axis, which conv2d would have dropped.
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = None if bias is None else as_tensor(bias)
    s, p = _pair(stride), _pair(pad)
    ci, co, kt, kf = w.shape
    _check_conv_args(x, w, 0, bias, co)
    n, _, hi, wi = x.shape
    base = ((hi - 1) * s[0] - 2 * p[0] + kt, (wi - 1) * s[1] - 2 * p[1] + kf)
    hw = base if output_size is None else tuple(int(v) for v in output_size)
    extra = (hw[0] - base[0], hw[1] - base[1])
    if not (0 <= extra[0] < s[0] and 0 <= extra[1] < s[1]):
        raise ShapeError(f"output size {hw} unreachable from input {(hi, wi)}, natural size {base}")
    if min(hw) < 1:
        raise ShapeError(f"kernel {(kt, kf)} larger than padded output for input {(hi, wi)}")
    padded = (n, co, hw[0] + 2 * p[0], hw[1] + 2 * p[1])
    wmat = w.data.reshape(ci, -1)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
    canvas = _col2im(xmat @ wmat, padded, (kt, kf), s, (hi, wi))
    out = canvas[:, :, p[0]:p[0] + hw[0], p[1]:p[1] + hw[1]]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1])))
        cols = _im2col(gp, (kt, kf), s, (hi, wi))
        gx = gw = gb = None
        if x.requires_grad:
            gx = (cols @ wmat.T).reshape(n, hi, wi, ci).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = (xmat.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out, "conv_transpose2d", inputs, grad_fn)


def conv_transpose1d(x, w, stride: int, bias=None) -> Tensor:
    """Overlap-add synthesis: (N, C, T) frames, weight (C, O, K) -> (N, O, (T-1)*S + K)."""
    x, w = as_tensor(x), as_tensor(w)
    bias = None if bias is None else as_tensor(bias)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected (N, C, T) input and (C, O, K) weight, got {x.shape} and {w.shape}")
    n, c, t = x.shape
    if t == 0:
        raise ShapeError("conv_transpose1d needs at least one frame")
    if w.shape[0] != c:
        raise ShapeError(f"input channels {c} do not match weight {w.shape}")
    _, o, k = w.shape
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    s = int(stride)
    length = (t - 1) * s + k
    wmat = w.data.reshape(c, o * k)
    xmat = x.data.transpose(0, 2, 1).reshape(n * t, c)
    frames = (xmat @ wmat).reshape(n, t, o, k)
    out = np.zeros((n, o, length), dtype=frames.dtype)
    for i in range(t):
        out[:, :, i * s:i * s + k] += frames[:, i]
    if bias is not None:
        out += bias.data[None, :, None]

    def grad_fn(g):
        idx = np.arange(t)[:, None] * s + np.arange(k)[None, :]
        gframes = g[:, :, idx].transpose(0, 2, 1, 3).reshape(n * t, o * k)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gframes @ wmat.T).reshape(n, t, c).transpose(0, 2, 1)
        if w.requires_grad:
            gw = (xmat.T @ gframes).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out, "conv_transpose1d", inputs, grad_fn)
