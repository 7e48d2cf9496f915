"""Finite-difference verification of reverse-mode gradients.

The relative error of a gradient array is ``max|analytic - numeric|`` divided
by ``max(max|analytic|, max|numeric|)``. Numeric gradients use central
differences with step 1e-5 and everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .backbone import Network, NetworkConfig, ResidualBlock, StageSpec, residual_block_forward
from .cells import (AttentionUnit, DiaLstmParams, DiaState, SeParams, StandardLstmParams, dia_lstm_step,
                    se_forward, stack_cells, standard_lstm_step)
from .layers import BatchNorm
from .tensor import Parameter, Tensor

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_gradient(fn: Callable[[], float], arr: np.ndarray, h: float = STEP, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: list[Tensor], h: float = STEP,
                    probes: int | None = None, seed: int = 0, corrupt: bool = False) -> float:
    """Max relative error between backward() and finite differences over ``tensors``.

    ``probes`` limits the number of entries checked per tensor (sampled with
    ``seed``). ``corrupt`` scales analytic gradients by 1.01, a fault hook.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    for t in tensors:
        t.grad = None
    if corrupt:
        analytic = [a * 1.01 + 1e-3 for a in analytic]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        idx = None
        if probes is not None and t.size > probes:
            idx = np.sort(rng.choice(t.size, probes, replace=False))
        num = numeric_gradient(lambda: loss_fn().item(), t.data, h, idx)
        if idx is not None:
            a = a.reshape(-1)[idx]
            num = num.reshape(-1)[idx]
        worst = max(worst, relative_error(a, num))
    return worst


def _leaf(rng, shape, low=-2.0, high=2.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _op_cases(rng):
    x4 = _leaf(rng, (2, 3, 5, 5))
    k = _leaf(rng, (4, 3, 3, 3))
    k2 = _leaf(rng, (2, 3, 3, 3))
    x2 = _leaf(rng, (3, 4))
    w = _leaf(rng, (5, 4))
    b = _leaf(rng, (5,))
    s = _leaf(rng, (2, 3))
    gamma, beta = _leaf(rng, (3,)), _leaf(rng, (3,))
    logits = _leaf(rng, (4, 6))
    labels = rng.integers(0, 6, size=4)

    def bn(training):
        rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
        return lambda: ops.batch_norm(x4, gamma, beta, rm.copy(), rv.copy(), training)

    def weighted(make):
        shape = make().shape
        wts = rng.normal(size=shape)
        return lambda: _weighted_sum(make(), wts)

    conv_bn = BatchNorm(4, name="gc.bn", dtype=np.float64)
    conv_bn.gamma.data[:] = rng.uniform(0.5, 1.5, 4)
    cases = [
        ("conv2d", weighted(lambda: ops.conv2d(x4, k, 1, 1)), [x4, k]),
        ("conv2d_stride2", weighted(lambda: ops.conv2d(x4, k2, 2, 1)), [x4, k2]),
        ("linear", weighted(lambda: ops.linear(x2, w, b)), [x2, w, b]),
        ("global_average_pool", weighted(lambda: ops.global_average_pool(x4)), [x4]),
        ("channelwise_mul", weighted(lambda: ops.channelwise_mul(x4, s)), [x4, s]),
        ("sigmoid", weighted(lambda: ops.sigmoid(x2)), [x2]),
        ("tanh", weighted(lambda: ops.tanh(x2)), [x2]),
        ("relu", weighted(lambda: ops.relu(x2)), [x2]),
        ("batch_norm_train", weighted(bn(True)), [x4, gamma, beta]),
        ("batch_norm_eval", weighted(bn(False)), [x4, gamma, beta]),
        ("softmax_cross_entropy", lambda: ops.softmax_cross_entropy(logits, labels), [logits]),
        ("conv_bn_relu", weighted(lambda: ops.relu(conv_bn(ops.conv2d(x4, k, 1, 1)))),
         [x4, k, conv_bn.gamma, conv_bn.beta]),
    ]
    return cases


def _cell_cases(rng):
    n, r, b = 8, 2, 3
    dia = DiaLstmParams(n, r, name="gc.dia", seed=int(rng.integers(1 << 30)))
    dia_tanh = DiaLstmParams(n, r, "tanh", name="gc.diat", seed=int(rng.integers(1 << 30)))
    std = StandardLstmParams(n, name="gc.lstm", seed=int(rng.integers(1 << 30)))
    se = SeParams(n, 2, name="gc.se", seed=int(rng.integers(1 << 30)))
    ys = [_leaf(rng, (b, n)) for _ in range(5)]
    h0, c0 = _leaf(rng, (b, n), -1, 1), _leaf(rng, (b, n))
    a = _leaf(rng, (b, n, 3, 3))
    wh, wc = rng.normal(size=(b, n)), rng.normal(size=(b, n))

    def step_loss(params, fn):
        def loss():
            h, c = fn(ys[0], DiaState(h0, c0), params)
            return _weighted_sum(h, wh) + _weighted_sum(c, wc)
        return loss

    def unroll():
        st = DiaState(h0, c0)
        total = None
        for y in ys:
            h, c = dia_lstm_step(y, st, dia)
            st = DiaState(h, c, st.t + 1)
            term = _weighted_sum(h, wh)
            total = term if total is None else total + term
        return total + _weighted_sum(st.c, wc)

    stack = [DiaLstmParams(n, r, name=f"gc.stack{k}", seed=k + 7) for k in range(3)]

    def stacked():
        st = [DiaState(h0, c0)] * 3
        h, new = stack_cells(stack, ys[0], st)
        return _weighted_sum(h, wh) + _weighted_sum(new[0].c, wc)

    stack_params = [p for c in stack for p in c.parameters()]
    return [
        ("dia_lstm_step", step_loss(dia, dia_lstm_step), dia.parameters() + [ys[0], h0, c0]),
        ("dia_lstm_step_tanh", step_loss(dia_tanh, dia_lstm_step), dia_tanh.parameters() + [ys[0], h0, c0]),
        ("standard_lstm_step", step_loss(std, standard_lstm_step), std.parameters() + [ys[0], h0, c0]),
        ("dia_lstm_unroll5", unroll, dia.parameters() + ys + [h0, c0]),
        ("stacked_cells3", stacked, stack_params + [ys[0], h0, c0]),
        ("se_forward", lambda: _weighted_sum(se_forward(a, se), wh), se.parameters() + [a]),
    ]


def _block_cases(rng):
    cfg = NetworkConfig(stages=[StageSpec(4, 1, 1)], attention="dia_lstm", reduction=2, num_classes=2)
    block = ResidualBlock(4, 4, 1, cfg, "dia_lstm", True, name="gc.block", seed=3, dtype=np.float64)
    unit = AttentionUnit("dia_lstm", 4, 2, name="gc.unit", seed=3, dtype=np.float64)
    x = _leaf(rng, (3, 4, 5, 5))
    wts = rng.normal(size=(3, 4, 5, 5))

    def loss():
        out, _ = residual_block_forward(block, x, unit, unit.init_states(3, np.float64))
        return _weighted_sum(out.x_next, wts)

    params = block.parameters() + unit.parameters() + [x]
    return [("residual_block_dia", loss, params)]


def _network_cases(rng):
    cfg = NetworkConfig(stages=[StageSpec(4, 2, 1), StageSpec(8, 2, 2)], attention="dia_lstm",
                        reduction=2, num_classes=2, stem_channels=4)
    net = Network(cfg, seed=11, dtype=np.float64)
    x = rng.normal(size=(4, 3, 8, 8))
    y = np.array([0, 1, 1, 0])
    return [("network", lambda: ops.softmax_cross_entropy(net.forward(x).logits, y), net.parameters())]


SCOPES = {"ops": (_op_cases, 1e-6, None), "cell": (_cell_cases, 1e-6, None),
          "block": (_block_cases, 1e-6, None), "network": (_network_cases, 1e-4, 12)}


def run_suite(scope: str, seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {sorted(SCOPES)}")
    make, tol, probes = SCOPES[scope]
    rng = np.random.default_rng(seed)
    results = []
    for name, loss, tensors in make(rng):
        err = check_gradients(loss, tensors, probes=probes, seed=seed, corrupt=corrupt)
        results.append(CheckResult(name, err, tol))
    return results
