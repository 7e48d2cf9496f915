"""Attention units: the reduced DIA-LSTM cell, a standard LSTM cell, and SE.

DIA-LSTM step for pooled features y and previous state (h, c)::

    u_y = relu(W_ry y)            u_h = relu(W_rh h)          # width ceil(N/r)
    i, f, o = sigmoid(W_y* u_y + W_h* u_h + b_*)
    g = tanh(W_yg u_y + W_hg u_h + b_g)
    c' = f * c + i * g
    h' = o * act(c')               # act is sigmoid by default, tanh optional

Each input stream has its own reduction layer shared by that stream's four
gate projections; this is what makes the weight count 2*N*N/r + 8*N*N/r.
Reduction layers carry no bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, NumericalExplosion
from .module import Module, constant, uniform_fan_in
from .tensor import Tensor

GATES = ("i", "f", "o", "g")
OUTPUT_ACTIVATIONS = ("sigmoid", "tanh")


def reduced_width(channels: int, reduction: int) -> int:
    if reduction < 1:
        raise ConfigError(f"reduction ratio must be >= 1, got {reduction}")
    return math.ceil(channels / reduction)


@dataclass
class DiaState:
    h: Tensor
    c: Tensor
    t: int = 0

    @classmethod
    def zeros(cls, batch: int, channels: int, dtype=np.float64) -> "DiaState":
        return cls(Tensor(np.zeros((batch, channels), dtype=dtype)),
                   Tensor(np.zeros((batch, channels), dtype=dtype)), 0)


def _gate_bias(channels: int, gate: str, name: str, dtype):
    return constant((channels,), 1.0 if gate == "f" else 0.0, f"{name}.b_{gate}", dtype)


class DiaLstmParams(Module):
    def __init__(self, channels: int, reduction: int = 4, output_activation: str = "sigmoid",
                 *, name: str = "dia", seed: int = 0, dtype=np.float64):
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        n, nr = channels, reduced_width(channels, reduction)
        self.channels, self.reduction = n, reduction
        self.output_activation = output_activation
        self.reduce_y = uniform_fan_in((nr, n), n, seed, f"{name}.W_ry", dtype)
        self.reduce_h = uniform_fan_in((nr, n), n, seed, f"{name}.W_rh", dtype)
        self.w_y = [uniform_fan_in((n, nr), nr, seed, f"{name}.W_y{g}", dtype) for g in GATES]
        self.w_h = [uniform_fan_in((n, nr), nr, seed, f"{name}.W_h{g}", dtype) for g in GATES]
        self.bias = [_gate_bias(n, g, name, dtype) for g in GATES]

    @staticmethod
    def shapes(channels: int, reduction: int) -> tuple[list[tuple[int, ...]], list[tuple[int, ...]]]:
        """(weight shapes, bias shapes) of every stored array."""
        n, nr = channels, reduced_width(channels, reduction)
        return [(nr, n), (nr, n)] + [(n, nr)] * 8, [(n,)] * 4


class StandardLstmParams(Module):
    def __init__(self, channels: int, output_activation: str = "tanh",
                 *, name: str = "lstm", seed: int = 0, dtype=np.float64):
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        n = channels
        self.channels = n
        self.output_activation = output_activation
        self.w_y = [uniform_fan_in((n, n), n, seed, f"{name}.W_y{g}", dtype) for g in GATES]
        self.w_h = [uniform_fan_in((n, n), n, seed, f"{name}.W_h{g}", dtype) for g in GATES]
        self.bias = [_gate_bias(n, g, name, dtype) for g in GATES]

    @staticmethod
    def shapes(channels: int, reduction: int = 1):
        n = channels
        return [(n, n)] * 8, [(n,)] * 4


class SeParams(Module):
    def __init__(self, channels: int, reduction: int = 16, *, name: str = "se", seed: int = 0,
                 dtype=np.float64):
        n, nr = channels, reduced_width(channels, reduction)
        self.channels = n
        self.w1 = uniform_fan_in((nr, n), n, seed, f"{name}.W1", dtype)
        self.w2 = uniform_fan_in((n, nr), nr, seed, f"{name}.W2", dtype)

    @staticmethod
    def shapes(channels: int, reduction: int):
        nr = reduced_width(channels, reduction)
        return [(nr, channels), (channels, nr)], []


def _check_inputs(y: Tensor, state: DiaState, n: int) -> None:
    if y.ndim != 2 or y.shape[1] != n:
        raise ConfigError(f"cell expects input (B, {n}), got {y.shape}")
    if state.h.shape != y.shape or state.c.shape != y.shape:
        raise ConfigError(f"state shapes {state.h.shape}/{state.c.shape} do not match input {y.shape}")
    if not np.isfinite(y.data).all():
        raise NumericalExplosion("attention cell input")


def _lstm_update(pre_y: list[Tensor], pre_h: list[Tensor], c_prev: Tensor, act: str):
    i, f, o = (ops.sigmoid(a + b) for a, b in zip(pre_y[:3], pre_h[:3]))
    g = ops.tanh(pre_y[3] + pre_h[3])
    c = f * c_prev + i * g
    h = o * ops.ACTIVATIONS[act](c)
    return h, c


def dia_lstm_step(y: Tensor, state: DiaState, params: DiaLstmParams) -> tuple[Tensor, Tensor]:
    _check_inputs(y, state, params.channels)
    u_y = ops.relu(ops.linear(y, params.reduce_y))
    u_h = ops.relu(ops.linear(state.h, params.reduce_h))
    pre_y = [ops.linear(u_y, w) for w in params.w_y]
    pre_h = [ops.linear(u_h, w, b) for w, b in zip(params.w_h, params.bias)]
    return _lstm_update(pre_y, pre_h, state.c, params.output_activation)


def standard_lstm_step(y: Tensor, state: DiaState, params: StandardLstmParams) -> tuple[Tensor, Tensor]:
    _check_inputs(y, state, params.channels)
    pre_y = [ops.linear(y, w) for w in params.w_y]
    pre_h = [ops.linear(state.h, w, b) for w, b in zip(params.w_h, params.bias)]
    return _lstm_update(pre_y, pre_h, state.c, params.output_activation)


def se_forward(a: Tensor, params: SeParams) -> Tensor:
    """Squeeze-and-excitation gate vector sigmoid(W2 relu(W1 GAP(a))), shape (B, N)."""
    if a.ndim != 4 or a.shape[1] != params.channels:
        raise ConfigError(f"SE expects (B, {params.channels}, H, W), got {a.shape}")
    z = ops.relu(ops.linear(ops.global_average_pool(a), params.w1))
    return ops.sigmoid(ops.linear(z, params.w2))


def cell_step(y: Tensor, state: DiaState, params) -> tuple[Tensor, Tensor]:
    if isinstance(params, DiaLstmParams):
        return dia_lstm_step(y, state, params)
    return standard_lstm_step(y, state, params)


def stack_cells(cells, y: Tensor, states: list[DiaState]) -> tuple[Tensor, list[DiaState]]:
    """Run stacked cells; cell k consumes the hidden output of cell k-1."""
    if not cells:
        raise ConfigError("stack_cells needs at least one cell")
    if len(states) != len(cells):
        raise ConfigError(f"{len(cells)} cells but {len(states)} states")
    new_states = []
    inp = y
    for params, st in zip(cells, states):
        h, c = cell_step(inp, st, params)
        new_states.append(DiaState(h, c, st.t + 1))
        inp = h
    return inp, new_states


class AttentionUnit(Module):
    """A stack of recurrent cells shared by every block of one stage."""

    def __init__(self, kind: str, channels: int, reduction: int = 4, cells: int = 1,
                 output_activation: str = "sigmoid", *, name: str, seed: int, dtype=np.float64):
        if cells < 1:
            raise ConfigError("an attention unit needs at least one cell")
        self.kind, self.channels = kind, channels
        if kind == "dia_lstm":
            self.cells = [DiaLstmParams(channels, reduction, output_activation,
                                        name=f"{name}.cell{k}", seed=seed, dtype=dtype) for k in range(cells)]
        elif kind == "standard_lstm":
            self.cells = [StandardLstmParams(channels, output_activation,
                                             name=f"{name}.cell{k}", seed=seed, dtype=dtype) for k in range(cells)]
        else:
            raise ConfigError(f"unknown recurrent attention kind {kind!r}")

    def init_states(self, batch: int, dtype) -> list[DiaState]:
        return [DiaState.zeros(batch, self.channels, dtype) for _ in self.cells]

    def __call__(self, y: Tensor, states: list[DiaState]) -> tuple[Tensor, list[DiaState]]:
        return stack_cells(self.cells, y, states)


_SHAPES = {"dia_lstm": DiaLstmParams.shapes, "standard_lstm": StandardLstmParams.shapes,
           "se": SeParams.shapes}


def count_params(unit: str, channels: int, reduction: int = 1, include_bias: bool = False,
                 cells: int = 1) -> int:
    """Number of stored scalars in one unit, enumerated over its arrays."""
    if unit not in _SHAPES:
        raise ConfigError(f"unknown unit {unit!r}")
    weights, biases = _SHAPES[unit](channels, reduction)
    arrays = weights + (biases if include_bias else [])
    return cells * sum(math.prod(s) for s in arrays)
