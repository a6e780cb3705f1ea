"""Minimal module system: named parameters, buffers and a few layers."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .conv import conv2d, conv_transpose2d
from .core import Tensor
from .norm import RunningStats, batch_norm


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, RunningStats):
                yield name + ".mean", val.mean
                yield name + ".var", val.var
            elif isinstance(val, Module):
                yield from val.named_buffers(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def _children(self) -> Iterator["Module"]:
        for val in vars(self).values():
            if isinstance(val, Module):
                yield val
            elif isinstance(val, (list, tuple)):
                yield from (v for v in val if isinstance(v, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel=(1, 1), stride=(1, 1), pad=(0, 0), bias=True):
        kt, kf = kernel
        fan_in = c_in * kt * kf
        self.weight = parameter(uniform_fan_in(rng, (c_out, c_in, kt, kf), fan_in))
        self.bias = parameter(uniform_fan_in(rng, (c_out,), fan_in)) if bias else None
        self.stride, self.pad = tuple(stride), tuple(pad)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel, stride, pad, bias=True):
        kt, kf = kernel
        fan_in = c_in * kt * kf
        self.weight = parameter(uniform_fan_in(rng, (c_in, c_out, kt, kf), fan_in))
        self.bias = parameter(uniform_fan_in(rng, (c_out,), fan_in)) if bias else None
        self.stride, self.pad = tuple(stride), tuple(pad)

    def forward(self, x: Tensor, output_size=None) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad, output_size)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.stats = RunningStats.fresh(channels)
        self.eps, self.momentum = eps, momentum

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, self.training, self.eps, self.momentum)
