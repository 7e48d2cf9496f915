from __future__ import annotations

import numpy as np

from . import ops
from .module import Module, constant, kaiming_normal, uniform_fan_in
from .tensor import Tensor


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 *, name: str, seed: int, dtype=np.float32):
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = kaiming_normal((out_ch, in_ch, kernel, kernel), fan_in, seed, f"{name}.weight", dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 *, name: str, seed: int, dtype=np.float32):
        self.weight = uniform_fan_in((out_features, in_features), in_features, seed, f"{name}.weight", dtype)
        self.bias = None
        if bias:
            self.bias = uniform_fan_in((out_features,), in_features, seed, f"{name}.bias", dtype)
            self.bias.decay = False

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization with running statistics (momentum 0.1, eps 1e-5)."""

    def __init__(self, channels: int, affine: bool = True, *, name: str, dtype=np.float32,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.momentum, self.eps = momentum, eps
        self.gamma = constant((channels,), 1.0, f"{name}.gamma", dtype) if affine else None
        self.beta = constant((channels,), 0.0, f"{name}.beta", dtype) if affine else None
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)
