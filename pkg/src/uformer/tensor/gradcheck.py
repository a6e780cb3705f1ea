"""Central finite-difference gradient checks in 64-bit precision."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward, default_dtype


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"max rel err {self.max_rel_error:.3e} (tol {self.tol:.0e}) {status}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3,
                   scale: float | None = None) -> float:
    """Elementwise relative error, with denominators floored at ``floor`` times
    ``scale`` (default: the largest gradient magnitude) so near-zero entries
    are judged on scale."""
    if not analytic.size:
        return 0.0
    if scale is None:
        scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))))
    scale = max(scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
               tol: float = 1e-4, floor: float = 1e-3, seed: int = 7919) -> GradCheckReport:
    """Compare backprop gradients of ``f(*inputs)`` against central differences.

    Non-scalar outputs are reduced with fixed random weights so every output
    element contributes.  Inputs are promoted to float64 for the duration of
    the check and restored afterwards.  The relative-error floor uses the
    largest gradient over all inputs, so an input whose true gradient is
    identically zero is judged against the scale of the whole function.
    """
    saved = [(t.data, t.grad) for t in inputs]
    try:
        with default_dtype(np.float64):
            for t in inputs:
                t.data = t.data.astype(np.float64)
                t.grad = None
            out = f(*inputs)
            proj = np.random.default_rng(seed).standard_normal(out.shape)

            def scalar() -> float:
                return float(np.sum(f(*inputs).data.astype(np.float64) * proj))

            loss = (out * Tensor(proj)).sum()
            backward(loss)
            pairs = []
            for t in inputs:
                if not t.requires_grad:
                    continue
                analytic = np.zeros_like(t.data) if t.grad is None else t.grad
                numeric = np.zeros_like(t.data)
                flat, nflat = t.data.reshape(-1), numeric.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    up = scalar()
                    flat[i] = orig - eps
                    down = scalar()
                    flat[i] = orig
                    nflat[i] = (up - down) / (2 * eps)
                pairs.append((analytic, numeric))
            scale = max((max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
                         for a, n in pairs if a.size), default=0.0)
            errs = [relative_error(a, n, floor, scale) for a, n in pairs]
    finally:
        for t, (data, grad) in zip(inputs, saved):
            t.data, t.grad = data, grad
    return GradCheckReport(max(errs) if errs else 0.0, errs, tol)
