"""Time-domain, frequency-domain and blended training losses."""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tt
from .tensor import ShapeError, Tensor, as_tensor

MODES = ("T", "RI", "TF1", "TF2")
FLAVORS = ("MAE", "MSE")


@dataclass
class LossConfig:
    mode: str = "TF1"
    time_flavor: str = "MSE"
    alpha: float = 0.8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"loss mode must be one of {MODES}, got {self.mode!r}")
        if self.time_flavor not in FLAVORS:
            raise ValueError(f"time flavor must be one of {FLAVORS}, got {self.time_flavor!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def _pointwise(diff: Tensor, flavor: str) -> Tensor:
    return tt.mean(tt.square(diff) if flavor == "MSE" else tt.absolute(diff))


def time_loss(x, x_hat, flavor: str = "MSE") -> Tensor:
    """Mean squared (MSE) or absolute (MAE) sample error."""
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"time_loss: length mismatch {x.shape} vs {x_hat.shape}")
    return _pointwise(x_hat - x, flavor)


def freq_loss(spec, spec_hat, norm: str = "L1") -> Tensor:
    """Error between per-bin ``|re| + |im|`` of two (..., T, F, 2) spectrograms.

    ``L1`` averages the absolute difference over all (T, F) cells; ``L2``
    squares it instead.
    """
    spec, spec_hat = as_tensor(spec), as_tensor(spec_hat)
    if spec.shape != spec_hat.shape or spec.shape[-1] != 2:
        raise ShapeError(f"freq_loss: spectrogram shapes {spec.shape} vs {spec_hat.shape}")
    mag = tt.tsum(tt.absolute(spec), axis=-1)
    mag_hat = tt.tsum(tt.absolute(spec_hat), axis=-1)
    diff = mag - mag_hat
    if norm == "L1":
        return tt.mean(tt.absolute(diff))
    if norm == "L2":
        return tt.mean(tt.square(diff))
    raise ValueError(f"norm must be 'L1' or 'L2', got {norm!r}")


def ri_loss(spec, spec_hat, flavor: str = "MAE") -> Tensor:
    """Elementwise MAE/MSE directly on the real and imaginary arrays."""
    spec, spec_hat = as_tensor(spec), as_tensor(spec_hat)
    if spec.shape != spec_hat.shape:
        raise ShapeError(f"ri_loss: spectrogram shapes {spec.shape} vs {spec_hat.shape}")
    return _pointwise(spec_hat - spec, flavor)


def combined_loss(x, x_hat, spec, spec_hat, config: LossConfig) -> Tensor:
    if config.mode == "T":
        if x_hat is None:
            raise ValueError("mode T needs a time-domain estimate")
        return time_loss(x, x_hat, config.time_flavor)
    if config.mode == "RI":
        if spec_hat is None:
            raise ValueError("mode RI needs a spectrogram estimate")
        return ri_loss(spec, spec_hat, config.time_flavor)
    if x_hat is None or spec_hat is None:
        raise ValueError(f"mode {config.mode} needs both time and spectrogram estimates")
    lt = time_loss(x, x_hat, config.time_flavor)
    lf = freq_loss(spec, spec_hat, "L1" if config.mode == "TF1" else "L2")
    a = config.alpha
    return lt * a + lf * (1.0 - a)
