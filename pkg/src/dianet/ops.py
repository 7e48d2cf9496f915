"""Differentiable operations used by the backbone and the attention cells."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .tensor import Tensor


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B,C,H,W) with ``w`` (K,C,kh,kw), via im2col."""
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    K, Cw, kh, kw = w.shape
    if C != Cw:
        raise ConfigError(f"conv2d channel mismatch: input has {C}, kernel expects {Cw}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ConfigError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    s = stride
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1

    # channels-last padded copy; im2col rows are laid out (kh, kw, C) so each
    # kernel offset copies contiguous runs of C values
    xh = np.zeros((B, Hp, Wp, C), dtype=x.dtype)
    xh[:, padding:padding + H, padding:padding + W, :] = x.data.transpose(0, 2, 3, 1)
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xh[:, i:i + s * Ho:s, j:j + s * Wo:s, :]
    cols = cols.reshape(B * Ho * Wo, kh * kw * C)
    w2 = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(K, -1)
    out = np.ascontiguousarray((cols @ w2.T).reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, K)
        gw = None
        if w.requires_grad:
            gw = np.ascontiguousarray((g2.T @ cols).reshape(K, kh, kw, C).transpose(0, 3, 1, 2))
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(B, Ho, Wo, kh, kw, C)
            gxh = np.zeros((B, Hp, Wp, C), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxh[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += gcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxh[:, padding:padding + H, padding:padding + W, :].transpose(0, 3, 1, 2))
        return gx, gw

    return Tensor.make(out, (x, w), backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x of shape (B, n), weight (m, n)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ConfigError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigError(f"linear bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.make(out, parents, backward, "linear")


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (B,N,H,W) -> (B,N)."""
    if x.ndim != 4:
        raise ConfigError(f"global_average_pool expects 4-D input, got {x.shape}")
    B, N, H, W = x.shape
    scale = 1.0 / (H * W)

    def backward(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], (B, N, H, W)).astype(g.dtype),)

    return Tensor.make(x.data.mean(axis=(2, 3)), (x,), backward, "gap")


def channelwise_mul(features: Tensor, scale: Tensor) -> Tensor:
    """Scale channel n of every sample by ``scale[b, n]``."""
    if features.ndim != 4 or scale.shape != features.shape[:2]:
        raise ConfigError(f"channelwise_mul mismatch: features {features.shape}, scale {scale.shape}")
    f, s = features.data, scale.data

    def backward(g):
        gf = g * s[:, :, None, None] if features.requires_grad else None
        gs = (g * f).sum(axis=(2, 3)) if scale.requires_grad else None
        return gf, gs

    return Tensor.make(f * s[:, :, None, None], (features, scale), backward, "chmul")


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return Tensor.make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor.make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def batch_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B,N,H,W) or (B,N) inputs.

    In training mode the batch statistics are used and the running buffers are
    updated in place (running_var tracks the unbiased batch variance).
    ``gamma``/``beta`` may be None for a non-affine normalization.
    """
    if x.ndim not in (2, 4):
        raise ConfigError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    N = x.shape[1]
    if running_mean.shape != (N,) or running_var.shape != (N,):
        raise ConfigError(f"batch_norm running stats must have shape ({N},)")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, N) if x.ndim == 2 else (1, N, 1, 1)
    m = x.size // N
    xd = x.data

    if training:
        if m < 2:
            raise ConfigError("batch_norm in training mode needs at least 2 values per channel")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)

    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    g_ = gamma.data.reshape(bshape) if gamma is not None else None
    out = xhat * g_ if g_ is not None else xhat
    if beta is not None:
        out = out + beta.data.reshape(bshape)

    def backward(g):
        dxhat = g * g_ if g_ is not None else g
        if training:
            sum_d = dxhat.sum(axis=axes).reshape(bshape)
            sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = (inv.reshape(bshape) / m) * (m * dxhat - sum_d - xhat * sum_dx)
        else:
            gx = dxhat * inv.reshape(bshape)
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return Tensor.make(out.astype(xd.dtype, copy=False), parents, backward, "batch_norm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ConfigError(f"cross entropy mismatch: logits {logits.shape}, labels {labels.shape}")
    B, K = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise ConfigError(f"labels must lie in [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.mean(logsumexp - z[rows, labels])

    def backward(g):
        p = np.exp(z - logsumexp[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return Tensor.make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "xent")
