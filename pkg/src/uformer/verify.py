"""Invariant suites: gradient checks, adjointness, DSP round trips, attention oracles.

The scalar-loop oracles here are deliberately naive and share no code with
the vectorized implementations they check.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dsp
from . import tensor as tt
from .attention import MHCA, MHSA, AxialAttention, positional_head, scaled_dot_attention
from .loss import freq_loss, time_loss
from .tensor import Tensor, default_dtype, grad_check
from .tensor.norm import RunningStats

SEEDS = range(5)


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.error) and self.error < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} max err {self.error:.3e}  (tol {self.tol:.0e})"


def _t(rng, *shape, scale=1.0, grad=True, shift=0.0):
    return Tensor(scale * rng.standard_normal(shape) + shift, requires_grad=grad, dtype=np.float64)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return Tensor(np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x),
                  requires_grad=True, dtype=np.float64)


# -- scalar-loop oracles -----------------------------------------------------------

def oracle_scaled_dot(q, k, v, scale_len=None):
    length = q.shape[0] if scale_len is None else scale_len
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = [sum(q[i, a] * k[j, a] for a in range(q.shape[1])) / math.sqrt(length)
                  for j in range(k.shape[0])]
        top = max(logits)
        w = [math.exp(l - top) for l in logits]
        s = sum(w)
        for j in range(k.shape[0]):
            out[i] += w[j] / s * v[j]
    return out


def oracle_positional(q, k, v, rq, rk, rv, span, sign=-1.0, scale=None):
    length = q.shape[0]
    out = np.zeros((length, v.shape[1]))
    m = span
    for p in range(length):
        cs = [c for c in range(length) if abs(c - p) < m]
        logits = []
        for c in cs:
            d = c - p + m - 1
            val = float(np.dot(q[p], k[c]) + np.dot(q[p], rq[d]) + np.dot(k[c], rk[d]))
            logits.append(val if scale is None else val * scale)
        top = max(logits)
        w = [math.exp(l - top) for l in logits]
        s = sum(w)
        for wc, c in zip(w, cs):
            out[p] += wc / s * (v[c] + sign * rv[c - p + m - 1])
    return out


def oracle_axial(x, att: AxialAttention):
    """x: (C, T, F) float64 -> (C, T, F), one sequence at a time."""
    c, t, f = x.shape
    wq, wk, wv, wo = (np.asarray(w.data, np.float64) for w in (att.w_q, att.w_k, att.w_v, att.w_o))
    rq, rk, rv = (np.asarray(r.data, np.float64) for r in (att.r_q, att.r_k, att.r_v))
    span = att.span
    out = np.zeros_like(x)
    n_seq, length = (f, t) if att.axis == "time" else (t, f)
    m = min(span, length)
    lo = span - m
    rq, rk, rv = rq[lo:lo + 2 * m - 1], rk[lo:lo + 2 * m - 1], rv[lo:lo + 2 * m - 1]
    scale = {"none": None, "len": 1 / math.sqrt(length), "dk": 1 / math.sqrt(att.dk)}[att.scale]
    for s in range(n_seq):
        seq = x[:, :, s].T if att.axis == "time" else x[:, s, :].T  # (length, C)
        heads = []
        for h in range(att.heads):
            sk = slice(h * att.dk, (h + 1) * att.dk)
            sv = slice(h * att.dv, (h + 1) * att.dv)
            heads.append(oracle_positional(seq @ wq[:, sk], seq @ wk[:, sk], seq @ wv[:, sv],
                                           rq, rk, rv, m, att.value_sign, scale))
        res = np.concatenate(heads, axis=1) @ wo  # (length, C)
        if att.axis == "time":
            out[:, :, s] = res.T
        else:
            out[:, s, :] = res.T
    return out


def oracle_mhca_mask(x, y, gate: MHCA):
    """Per-head, per-frame column-normalized mask, (heads, T, F, F)."""
    def conv1x1(conv, z):
        w = conv.weight.data[:, :, 0, 0].astype(np.float64)
        return np.einsum("oc,ctf->otf", w, z) + conv.bias.data[:, None, None]

    q, k = conv1x1(gate.query, x), conv1x1(gate.key, y)
    c, t, f = x.shape
    dh = c // gate.heads
    mask = np.zeros((gate.heads, t, f, f))
    for h in range(gate.heads):
        for tt_ in range(t):
            qh = q[h * dh:(h + 1) * dh, tt_, :].T
            kh = k[h * dh:(h + 1) * dh, tt_, :].T
            p = qh @ kh.T / math.sqrt(f)
            for j in range(f):
                col = np.exp(p[:, j] - p[:, j].max())
                mask[h, tt_, :, j] = col / col.sum()
    return mask


# -- gradient suite --------------------------------------------------------------

def _gc(name: str, build: Callable[[np.random.Generator], tuple], tol: float) -> Check:
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        f, inputs = build(rng)
        worst = max(worst, grad_check(f, inputs, tol=tol, seed=1000 + seed).max_rel_error)
    return Check(f"gradcheck {name}", worst, tol)


def gradcheck_suite() -> list[Check]:
    checks = [
        _gc("add (broadcast)", lambda r: (tt.add, [_t(r, 3, 4), _t(r, 3, 1)]), 1e-4),
        _gc("sub (broadcast)", lambda r: (tt.sub, [_t(r, 2, 3, 4), _t(r, 4)]), 1e-4),
        _gc("mul (broadcast)", lambda r: (tt.mul, [_t(r, 2, 1), _t(r, 2, 3)]), 1e-4),
        _gc("matmul (batched)", lambda r: (tt.matmul, [_t(r, 3, 4, 5), _t(r, 3, 5, 2)]), 1e-4),
        _gc("conv2d", lambda r: (lambda x, w, b: tt.conv2d(x, w, b, (1, 2), (1, 2)),
                                 [_t(r, 2, 3, 5, 9), _t(r, 4, 3, 3, 5, scale=0.3), _t(r, 4)]), 1e-4),
        _gc("conv_transpose2d", lambda r: (lambda x, w, b: tt.conv_transpose2d(x, w, b, (1, 2), (1, 2)),
                                           [_t(r, 2, 4, 5, 5), _t(r, 4, 3, 3, 5, scale=0.3), _t(r, 3)]), 1e-4),
        _gc("conv_transpose1d", lambda r: (lambda x, w: tt.conv_transpose1d(x, w, 4),
                                           [_t(r, 2, 6, 5), _t(r, 6, 1, 8)]), 1e-4),
        _gc("batch_norm (train)", lambda r: (
            lambda x, g, b: tt.batch_norm(x, g, b, RunningStats.fresh(3), True),
            [_t(r, 2, 3, 4, 5), _t(r, 3, shift=1.0), _t(r, 3)]), 1e-4),
        _gc("batch_norm (eval)", lambda r: (
            lambda x, g, b: tt.batch_norm(x, g, b, RunningStats.fresh(3), False),
            [_t(r, 2, 3, 4, 5), _t(r, 3, shift=1.0), _t(r, 3)]), 1e-4),
        _gc("leaky_relu", lambda r: (lambda x: tt.leaky_relu(x, 0.2), [_away_from_zero(r, (4, 5))]), 1e-3),
        _gc("absolute", lambda r: (tt.absolute, [_away_from_zero(r, (4, 5))]), 1e-3),
        _gc("sigmoid", lambda r: (tt.sigmoid, [_t(r, 4, 5, scale=3.0)]), 1e-4),
        _gc("softmax", lambda r: (lambda x: tt.softmax(x, -2), [_t(r, 3, 4, 5)]), 1e-4),
        _gc("take_along_last", lambda r: (
            lambda x, idx=r.integers(0, 5, size=(4, 6)): tt.take_along_last(x, idx), [_t(r, 2, 4, 5)]), 1e-4),
        _gc("scaled_dot_attention", lambda r: (
            scaled_dot_attention, [_t(r, 2, 5, 3), _t(r, 2, 5, 3), _t(r, 2, 5, 4)]), 1e-4),
        _gc("positional_head", lambda r: (
            lambda *a: positional_head(*a, span=3),
            [_t(r, 2, 6, 3), _t(r, 2, 6, 3), _t(r, 2, 6, 3), _t(r, 5, 3), _t(r, 5, 3), _t(r, 5, 3)]), 1e-4),
        _gc("time_loss MSE", lambda r: (lambda a, b: time_loss(a, b, "MSE"), [_t(r, 2, 9), _t(r, 2, 9)]), 1e-4),
        _gc("time_loss MAE", lambda r: (
            lambda a, b: time_loss(a, b, "MAE"), [_t(r, 2, 9, grad=False), _away_from_zero(r, (2, 9))]), 1e-3),
        _gc("freq_loss L1", lambda r: (
            lambda a, ref=3 * r.standard_normal((3, 4, 2)): freq_loss(Tensor(ref, dtype=np.float64), a, "L1"),
            [_away_from_zero(r, (3, 4, 2), 0.05)]), 1e-3),
        _gc("freq_loss L2", lambda r: (
            lambda a, ref=r.standard_normal((3, 4, 2)): freq_loss(Tensor(ref, dtype=np.float64), a, "L2"),
            [_away_from_zero(r, (3, 4, 2), 0.05)]), 1e-3),
    ]
    checks.append(_block_check("MHSA block", _mhsa_case))
    checks.append(_block_check("MHCA block", _mhca_case))
    return checks


def _mhsa_case(rng):
    block = MHSA(rng, 4, heads=2, span=2)
    x = _t(rng, 1, 4, 3, 4)
    return (lambda x, *_: block(x)), [x] + block.parameters()


def _mhca_case(rng):
    gate = MHCA(rng, 4, heads=2)
    x, y = _t(rng, 1, 4, 3, 5), _t(rng, 1, 4, 3, 5)
    return (lambda x, y, *_: gate(x, y)), [x, y] + gate.parameters()


def _block_check(name, case, tol=1e-3) -> Check:
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        f, inputs = case(rng)
        worst = max(worst, grad_check(f, inputs, tol=tol, seed=1000 + seed).max_rel_error)
    return Check(f"gradcheck {name}", worst, tol)


# -- adjointness -------------------------------------------------------------------

def _adjoint_gap(fwd: Callable[[Tensor], Tensor], x: np.ndarray, y: np.ndarray) -> float:
    """|<L x, y> - <x, L^T y>| / scale, with L^T y obtained by backprop through L."""
    with default_dtype(np.float64):
        xt = Tensor(x, requires_grad=True)
        out = fwd(xt)
        lhs = float(np.sum(out.data * y))
        (out * Tensor(y)).sum().backward()
        rhs = float(np.sum(x * xt.grad))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)


def adjoint_suite() -> list[Check]:
    worst = {"conv2d / conv_transpose2d": 0.0, "conv_transpose1d": 0.0, "matmul": 0.0,
             "conv_transpose2d (backprop)": 0.0}
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((4, 3, 3, 5))
        x = rng.standard_normal((2, 3, 6, 9))
        y = rng.standard_normal((2, 4, 6, 5))
        with default_dtype(np.float64):
            lx = tt.conv2d(Tensor(x), Tensor(w), None, (1, 2), (1, 2)).data
            lty = tt.conv_transpose2d(Tensor(y), Tensor(w), None, (1, 2), (1, 2), output_size=(6, 9)).data
        a, b = float(np.sum(lx * y)), float(np.sum(x * lty))
        worst["conv2d / conv_transpose2d"] = max(worst["conv2d / conv_transpose2d"],
                                                 abs(a - b) / max(abs(a), abs(b)))
        worst["conv_transpose2d (backprop)"] = max(worst["conv_transpose2d (backprop)"], _adjoint_gap(
            lambda t: tt.conv_transpose2d(t, Tensor(w), None, (1, 2), (1, 2), output_size=(6, 9)), y, x))
        w1 = rng.standard_normal((6, 1, 8))
        worst["conv_transpose1d"] = max(worst["conv_transpose1d"], _adjoint_gap(
            lambda t: tt.conv_transpose1d(t, Tensor(w1), 4), rng.standard_normal((2, 6, 5)),
            rng.standard_normal((2, 1, 24))))
        b_fixed = rng.standard_normal((3, 5, 2))
        worst["matmul"] = max(worst["matmul"], _adjoint_gap(
            lambda t: tt.matmul(t, Tensor(b_fixed)), rng.standard_normal((3, 4, 5)),
            rng.standard_normal((3, 4, 2))))
    return [Check(f"adjoint {k}", v, 1e-4) for k, v in worst.items()]


# -- dsp ---------------------------------------------------------------------------

def dsp_suite(n_round_trip: int = 100) -> list[Check]:
    rng = np.random.default_rng(0)
    rt = 0.0
    t0 = time.perf_counter()
    for _ in range(n_round_trip):
        n = int(rng.integers(8000, 64001))
        x = rng.standard_normal(n) * rng.uniform(0.01, 1.0)
        rt = max(rt, float(np.max(np.abs(dsp.istft(dsp.stft(x), n) - x))))
    elapsed = time.perf_counter() - t0
    checks = [Check(f"stft round trip x{n_round_trip}", rt, 1e-5),
              Check("stft round trip runtime (s)", elapsed, 10.0)]
    x = rng.standard_normal(16000)
    spec = dsp.stft(x)
    frames = dsp.frame_signal(x) * dsp.hann_window()
    # onesided: double the interior bins, divide by K
    weights = np.full(257, 2.0)
    weights[[0, -1]] = 1.0
    parseval = np.sum((spec[..., 0] ** 2 + spec[..., 1] ** 2) * weights, axis=1) / 512
    time_energy = np.sum(frames ** 2, axis=1)
    checks.append(Check("parseval frame energy", float(np.max(np.abs(parseval - time_energy))
                                                       / np.max(time_energy)), 1e-4))
    w = dsp.hann_window(512)
    checks.append(Check("hann COLA at hop K/2", float(np.ptp(w[:256] + w[256:])), 1e-12))
    worst = 0.0
    clean = np.sin(2 * np.pi * 220 * np.arange(32000) / 16000) * (1 + 0.3 * rng.standard_normal(32000))
    for snr in (-5.0, 0.0, 5.0, 10.0):
        noisy, noise = dsp.mix_at_snr(clean, rng.standard_normal(20000), snr)
        worst = max(worst, abs(dsp.snr_db(clean, noisy - clean) - snr))
    checks.append(Check("mixer SNR error (dB)", worst, 0.01))
    return checks


# -- attention ---------------------------------------------------------------------

def attention_suite() -> list[Check]:
    rng = np.random.default_rng(0)
    errs = {"scaled_dot_attention vs loop": 0.0, "positional_head vs loop": 0.0,
            "axial time vs loop": 0.0, "axial frequency vs loop": 0.0, "mhca mask vs loop": 0.0}
    for trial in range(5):
        length = int(rng.integers(1, 7))
        q, k = rng.standard_normal((length, 3)), rng.standard_normal((length, 3))
        v = rng.standard_normal((length, 2))
        with default_dtype(np.float64):
            got = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
        ref = oracle_scaled_dot(q, k, v)
        errs["scaled_dot_attention vs loop"] = max(errs["scaled_dot_attention vs loop"], _rel(got, ref))
        span = int(rng.integers(1, length + 2))
        tabs = [rng.standard_normal((2 * span - 1, 3)) for _ in range(2)] + [rng.standard_normal((2 * span - 1, 2))]
        with default_dtype(np.float64):
            got = positional_head(Tensor(q), Tensor(k), Tensor(v), *(Tensor(t) for t in tabs), span).data
        m = min(span, length)
        lo = span - m
        ref = oracle_positional(q, k, v, *(t[lo:lo + 2 * m - 1] for t in tabs), m)
        errs["positional_head vs loop"] = max(errs["positional_head vs loop"], _rel(got, ref))
        t, f = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        for axis in ("time", "frequency"):
            att = AxialAttention(rng, 4, heads=2, span=3, axis=axis)
            x = rng.standard_normal((1, 4, t, f))
            with default_dtype(np.float64):
                got = att(Tensor(x)).data[0]
            key = f"axial {axis} vs loop"
            errs[key] = max(errs[key], _rel(got, oracle_axial(x[0], att)))
        gate = MHCA(rng, 4, heads=2)
        x, y = rng.standard_normal((1, 4, t, f)), rng.standard_normal((1, 4, t, f))
        with default_dtype(np.float64):
            _, mask = gate.gate(Tensor(x), Tensor(y))
        errs["mhca mask vs loop"] = max(errs["mhca mask vs loop"], _rel(mask.data[0], oracle_mhca_mask(x[0], y[0], gate)))
    checks = [Check(k, v, 1e-5) for k, v in errs.items()]

    gate = MHCA(rng, 8, heads=4)
    x, y = rng.standard_normal((1, 8, 5, 6)), rng.standard_normal((1, 8, 5, 6))
    z, mask = gate.gate(Tensor(x), Tensor(y))
    checks.append(Check("mhca mask column sums |sum - 1|", float(np.max(np.abs(mask.data.sum(axis=-2) - 1))), 1e-6))
    outside = float(np.mean((z.data <= 0) | (z.data >= 1)))
    checks.append(Check("mhca gate fraction outside (0,1)", outside, 1e-12))

    worst = 0.0
    block = MHSA(rng, 8, heads=2, span=3)
    x = rng.standard_normal((1, 8, 5, 6))
    pf, pt = rng.permutation(6), rng.permutation(5)
    with default_dtype(np.float64):
        a = block.time(Tensor(x[..., pf])).data
        b = block.time(Tensor(x)).data[..., pf]
        worst = max(worst, float(np.max(np.abs(a - b))))
        a = block.freq(Tensor(x[:, :, pt])).data
        b = block.freq(Tensor(x)).data[:, :, pt]
        worst = max(worst, float(np.max(np.abs(a - b))))
    checks.append(Check("axial permutation equivariance", worst, 1e-6))
    return checks


def _rel(got, ref) -> float:
    return float(np.max(np.abs(got - ref)) / max(float(np.max(np.abs(ref))), 1e-12))


SUITES = {
    "gradcheck": lambda: gradcheck_suite() + adjoint_suite(),
    "dsp": dsp_suite,
    "attention": attention_suite,
}


def run(suite: str = "all") -> list[Check]:
    names = list(SUITES) if suite == "all" else [suite]
    out: list[Check] = []
    for name in names:
        out.extend(SUITES[name]())
    return out
