"""Independent scalar reference implementations used as test oracles."""

import math

import numpy as np


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


ACT = {"sigmoid": _sig, "tanh": math.tanh}


def _gates(pre, c_prev, act, n):
    h, c = np.zeros(n), np.zeros(n)
    for j in range(n):
        i = _sig(pre[0][j])
        f = _sig(pre[1][j])
        o = _sig(pre[2][j])
        g = math.tanh(pre[3][j])
        c[j] = f * c_prev[j] + i * g
        h[j] = o * ACT[act](c[j])
    return h, c


def dia_lstm_reference(y, h_prev, c_prev, w_ry, w_rh, w_y, w_h, b, act="sigmoid"):
    """One DIA-LSTM step for a single sample, written index by index."""
    n, nr = len(y), w_ry.shape[0]
    u_y = [max(0.0, sum(w_ry[k, m] * y[m] for m in range(n))) for k in range(nr)]
    u_h = [max(0.0, sum(w_rh[k, m] * h_prev[m] for m in range(n))) for k in range(nr)]
    pre = [[sum(w_y[g][j, k] * u_y[k] for k in range(nr)) + sum(w_h[g][j, k] * u_h[k] for k in range(nr))
            + b[g][j] for j in range(n)] for g in range(4)]
    return _gates(pre, c_prev, act, n)


def standard_lstm_reference(y, h_prev, c_prev, w_y, w_h, b, act="tanh"):
    n = len(y)
    pre = [[sum(w_y[g][j, m] * y[m] for m in range(n)) + sum(w_h[g][j, m] * h_prev[m] for m in range(n))
            + b[g][j] for j in range(n)] for g in range(4)]
    return _gates(pre, c_prev, act, n)


def planted_trace(samples, channels, layers, planted, seed=0):
    """Hidden-state trace where layer j is an exact function of layer planted[j] only.

    Layers absent from ``planted`` are independent noise. The function is a
    fixed elementwise nonlinearity of a random channel mixing.
    """
    rng = np.random.default_rng(seed)
    h = np.zeros((samples, channels, layers))
    for j in range(layers):
        src = planted.get(j + 1)
        if src is None:
            h[:, :, j] = rng.uniform(0, 1, size=(samples, channels))
        else:
            mix = rng.normal(size=(channels, channels))
            h[:, :, j] = 1.0 / (1.0 + np.exp(-(h[:, :, src - 1] - 0.5) @ mix))
    return h
