"""Tiny module system: parameter registration, seeded init, train/eval flag."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Parameter


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one parameter, keyed by (seed, parameter id).

    Keying by id rather than construction order means two models built from
    different configs share every parameter they have in common.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])))


def kaiming_normal(shape, fan_in: int, seed: int, name: str, dtype) -> Parameter:
    std = np.sqrt(2.0 / fan_in)
    data = param_rng(seed, name).normal(0.0, std, size=shape).astype(dtype)
    return Parameter(data, name=name, decay=True)


def uniform_fan_in(shape, fan_in: int, seed: int, name: str, dtype) -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    data = param_rng(seed, name).uniform(-bound, bound, size=shape).astype(dtype)
    return Parameter(data, name=name, decay=True)


def constant(shape, value: float, name: str, dtype, decay: bool = False) -> Parameter:
    return Parameter(np.full(shape, value, dtype=dtype), name=name, decay=decay)


class Module:
    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        for _, child in self._children():
            items = [child] if isinstance(child, Parameter) else child.parameters()
            for p in items:
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (e.g. batch-norm running statistics) keyed by id."""
        out: dict[str, np.ndarray] = {}
        for _, child in self._children():
            if isinstance(child, Module):
                out.update(child.buffers())
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
