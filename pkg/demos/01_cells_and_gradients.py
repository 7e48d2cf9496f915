"""A first look at the recurrent attention cell.

Builds a DIA-LSTM cell, feeds it a short sequence of pooled feature vectors,
and checks its gradients against finite differences.
"""
import numpy as np

from dianet.cells import DiaLstmParams, DiaState, count_params, dia_lstm_step
from dianet.gradcheck import check_gradients
from dianet.tensor import Tensor

rng = np.random.default_rng(0)
N, r, B = 16, 4, 3
cell = DiaLstmParams(N, r, name="demo", seed=0)

# one input per residual block; the state carries across them
ys = [Tensor(rng.normal(size=(B, N))) for _ in range(4)]
state = DiaState.zeros(B, N)
for t, y in enumerate(ys, 1):
    h, c = dia_lstm_step(y, state, cell)
    state = DiaState(h, c, t)
    print(f"block {t}: h in [{h.data.min():.3f}, {h.data.max():.3f}]  mean {h.data.mean():.3f}")

# sigmoid output keeps every attention value inside (0, 1)
print("weights:", count_params("dia_lstm", N, r), "= 10*N*N/r =", 10 * N * N // r)
print("a plain LSTM of the same width:", count_params("standard_lstm", N))

# the backward pass agrees with central differences
y0 = ys[0]
y0.requires_grad = True
wts = rng.normal(size=(B, N))


def loss():
    h, _ = dia_lstm_step(y0, DiaState.zeros(B, N), cell)
    return (h * Tensor(wts)).sum()


err = check_gradients(loss, cell.parameters() + [y0])
print(f"max relative gradient error: {err:.2e}")
