from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the velocity.

    v <- momentum * v + grad + wd * param;  param <- param - lr * v
    Weight decay applies only to parameters with ``decay=True``.
    """

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.data
            v = self._velocity[id(p)]
            v *= self.momentum
            v += g
            p.data -= self.lr * v
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

