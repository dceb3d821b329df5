"""Parameterized layers built on the engine ops.

Initialization is Kaiming-uniform from a caller-provided seeded generator so
runs are reproducible.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    Tensor,
    add,
    batch_norm_eval,
    batch_norm_train,
    conv1d,
    conv2d,
    matmul,
)


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                     fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable arrays (e.g. batch-norm running stats)."""
        return []


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = Tensor(_kaiming_uniform(rng, (in_features, out_features),
                                         in_features, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_features, dtype=dtype),
                        requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]


class Conv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float32):
        fan_in = in_channels * kernel
        self.w = Tensor(_kaiming_uniform(
            rng, (out_channels, in_channels, kernel), fan_in, dtype),
            requires_grad=True)
        self.b = Tensor(np.zeros(out_channels, dtype=dtype),
                        requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.w, self.b, stride=self.stride,
                      padding=self.padding)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float32):
        fan_in = in_channels * kernel * kernel
        self.w = Tensor(_kaiming_uniform(
            rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype),
            requires_grad=True)
        self.b = Tensor(np.zeros(out_channels, dtype=dtype),
                        requires_grad=True)
        self.stride = (stride, stride)
        self.padding = (padding, padding)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride,
                      padding=self.padding)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]


class BatchNorm2d(Layer):
    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5,
                 momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels, dtype=dtype),
                            requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype),
                           requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if train:
            y, mean, var = batch_norm_train(x, self.gamma, self.beta,
                                            eps=self.eps)
            self.running_mean += self.momentum * (
                mean.astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += self.momentum * (
                var.astype(self.running_var.dtype) - self.running_var)
            return y
        return batch_norm_eval(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, eps=self.eps)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state_arrays(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]
