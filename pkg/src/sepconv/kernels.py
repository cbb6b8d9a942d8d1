"""Layer kernels with hand-written backward passes.

Tensors are plain ``float32`` numpy arrays. Activations are NHWC, standard
conv weights are ``[kh, kw, cin, cout]`` and depthwise weights ``[kh, kw, c]``.
Every function here is pure: it never mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

DTYPE = np.float32

Padding = Literal["same", "valid"]
Mode = Literal["train", "infer"]


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit an operation's contract."""


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array (no copy when already one)."""
    return np.ascontiguousarray(x, dtype=DTYPE)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed; extra ints select an independent stream."""
    seed &= 0xFFFF_FFFF_FFFF_FFFF
    return np.random.Generator(np.random.PCG64([seed, *stream] if stream else seed))


@dataclass
class LayerGrads:
    d_input: np.ndarray
    d_params: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# padding arithmetic
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: Padding) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        if size < k:
            raise ShapeError(f"spatial size {size} smaller than kernel {k} with valid padding")
        return (size - k) // stride + 1
    raise ValueError(f"unknown padding {padding!r}")


def pad_amounts(size: int, k: int, stride: int, padding: Padding) -> tuple[int, int]:
    """(low, high) padding along one axis; the odd pixel goes to the high side."""
    if padding == "valid":
        return 0, 0
    out = conv_output_size(size, k, stride, padding)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _check_nhwc(x: np.ndarray, what: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D NHWC, got shape {x.shape}")


def _check_stride(stride: int) -> None:
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")


def _pad(x: np.ndarray, kh: int, kw: int, stride: int, padding: Padding):
    _, h, w, _ = x.shape
    ph = pad_amounts(h, kh, stride, padding)
    pw = pad_amounts(w, kw, stride, padding)
    if ph == (0, 0) and pw == (0, 0):
        return x, ph, pw
    return np.pad(x, ((0, 0), ph, pw, (0, 0))), ph, pw


def _window(xp: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int) -> np.ndarray:
    # column order (kh, kw, cin) matches weights.reshape(kh*kw*cin, cout)
    n, _, _, c = xp.shape
    if kh == 1 and kw == 1:
        return _window(xp, 0, 0, ho, wo, stride).reshape(n * ho * wo, c)
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = _window(xp, i, j, ho, wo, stride)
    return cols.reshape(n * ho * wo, kh * kw * c)


def _col2im(dcols: np.ndarray, padded_shape, kh: int, kw: int, ho: int, wo: int, stride: int) -> np.ndarray:
    n, _, _, c = padded_shape
    dcols = dcols.reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            _window(dxp, i, j, ho, wo, stride)[...] += dcols[:, :, :, i, j, :]
    return dxp


def _unpad(dxp: np.ndarray, ph, pw) -> np.ndarray:
    h = dxp.shape[1] - ph[0] - ph[1]
    w = dxp.shape[2] - pw[0] - pw[1]
    return np.ascontiguousarray(dxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + w, :])


# ---------------------------------------------------------------------------
# standard convolution
# ---------------------------------------------------------------------------

def _check_conv(x, weights, bias, stride):
    _check_nhwc(x)
    _check_stride(stride)
    if weights.ndim != 4:
        raise ShapeError(f"conv weights must be [kh,kw,cin,cout], got shape {weights.shape}")
    if x.shape[3] != weights.shape[2]:
        raise ShapeError(
            f"input channels (dim 3 of input) = {x.shape[3]} but weights cin (dim 2) = {weights.shape[2]}"
        )
    if bias is not None and bias.shape != (weights.shape[3],):
        raise ShapeError(f"bias shape {bias.shape} does not match cout = {weights.shape[3]}")


def conv2d(x, weights, bias=None, stride: int = 1, padding: Padding = "same") -> np.ndarray:
    """2-D convolution (cross-correlation) in NHWC via im2col + GEMM."""
    x, weights = as_tensor(x), as_tensor(weights)
    bias = None if bias is None else as_tensor(bias)
    _check_conv(x, weights, bias, stride)
    kh, kw, cin, cout = weights.shape
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp, _, _ = _pad(x, kh, kw, stride, padding)
    out = _im2col(xp, kh, kw, ho, wo, stride) @ weights.reshape(kh * kw * cin, cout)
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, cout)


def conv2d_backward(x, weights, stride: int, padding: Padding, d_output, has_bias: bool = True) -> LayerGrads:
    x, weights, d_output = as_tensor(x), as_tensor(weights), as_tensor(d_output)
    _check_conv(x, weights, None, stride)
    kh, kw, cin, cout = weights.shape
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if d_output.shape != (n, ho, wo, cout):
        raise ShapeError(f"d_output shape {d_output.shape} != forward output shape {(n, ho, wo, cout)}")
    xp, ph, pw = _pad(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, ho, wo, stride)
    dflat = d_output.reshape(n * ho * wo, cout)
    grads = {"weight": (cols.T @ dflat).reshape(weights.shape)}
    if has_bias:
        grads["bias"] = dflat.sum(axis=0)
    dcols = dflat @ weights.reshape(kh * kw * cin, cout).T
    dx = _unpad(_col2im(dcols, xp.shape, kh, kw, ho, wo, stride), ph, pw)
    return LayerGrads(dx, grads)


# ---------------------------------------------------------------------------
# depthwise convolution (depth multiplier 1)
# ---------------------------------------------------------------------------

def _check_dw(x, weights, bias, stride):
    _check_nhwc(x)
    _check_stride(stride)
    if weights.ndim != 3:
        raise ShapeError(f"depthwise weights must be [kh,kw,c], got shape {weights.shape}")
    if x.shape[3] != weights.shape[2]:
        raise ShapeError(
            f"input channels (dim 3 of input) = {x.shape[3]} but depthwise weights c (dim 2) = {weights.shape[2]}"
        )
    if bias is not None and bias.shape != (weights.shape[2],):
        raise ShapeError(f"bias shape {bias.shape} does not match c = {weights.shape[2]}")


def depthwise_conv2d(x, weights, bias=None, stride: int = 1, padding: Padding = "same") -> np.ndarray:
    x, weights = as_tensor(x), as_tensor(weights)
    bias = None if bias is None else as_tensor(bias)
    _check_dw(x, weights, bias, stride)
    kh, kw, c = weights.shape
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp, _, _ = _pad(x, kh, kw, stride, padding)
    out = np.zeros((n, ho, wo, c), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            out += _window(xp, i, j, ho, wo, stride) * weights[i, j]
    if bias is not None:
        out += bias
    return out


def depthwise_conv2d_backward(x, weights, stride: int, padding: Padding, d_output,
                              has_bias: bool = True) -> LayerGrads:
    x, weights, d_output = as_tensor(x), as_tensor(weights), as_tensor(d_output)
    _check_dw(x, weights, None, stride)
    kh, kw, c = weights.shape
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if d_output.shape != (n, ho, wo, c):
        raise ShapeError(f"d_output shape {d_output.shape} != forward output shape {(n, ho, wo, c)}")
    xp, ph, pw = _pad(x, kh, kw, stride, padding)
    dxp = np.zeros(xp.shape, dtype=DTYPE)
    dw = np.empty(weights.shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dw[i, j] = (_window(xp, i, j, ho, wo, stride) * d_output).sum(axis=(0, 1, 2))
            _window(dxp, i, j, ho, wo, stride)[...] += d_output * weights[i, j]
    grads = {"weight": dw}
    if has_bias:
        grads["bias"] = d_output.sum(axis=(0, 1, 2))
    return LayerGrads(_unpad(dxp, ph, pw), grads)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    mode: str


def batchnorm(x, gamma, beta, running_mean, running_var, mode: Mode = "train",
              eps: float = 1e-5, momentum: float = 0.9):
    """Per-channel batch normalization over every axis except the last.

    Returns ``(out, new_running_mean, new_running_var, cache)``. In infer mode
    the running statistics are returned unchanged.
    """
    x = as_tensor(x)
    c = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if np.shape(p) != (c,):
            raise ShapeError(f"{name} shape {np.shape(p)} does not match channel count {c}")
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    running_mean, running_var = as_tensor(running_mean), as_tensor(running_var)
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mean = x.mean(axis=axes, dtype=DTYPE)
        var = ((x - mean) ** 2).mean(axis=axes, dtype=DTYPE)
        new_mean = (momentum * running_mean + (1 - momentum) * mean).astype(DTYPE)
        new_var = (momentum * running_var + (1 - momentum) * var).astype(DTYPE)
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean.copy(), running_var.copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + DTYPE(eps))).astype(DTYPE)
    xhat = (x - mean) * inv_std
    out = xhat * gamma + beta
    return out, new_mean, new_var, BatchNormCache(xhat, inv_std, gamma, mode)


def batchnorm_backward(cache: BatchNormCache, d_output) -> LayerGrads:
    d_output = as_tensor(d_output)
    axes = tuple(range(d_output.ndim - 1))
    d_gamma = (d_output * cache.xhat).sum(axis=axes)
    d_beta = d_output.sum(axis=axes)
    if cache.mode == "infer":
        dx = d_output * (cache.gamma * cache.inv_std)
    else:
        m = DTYPE(np.prod([d_output.shape[a] for a in axes]))
        dxhat = d_output * cache.gamma
        dx = (cache.inv_std / m) * (
            m * dxhat - dxhat.sum(axis=axes) - cache.xhat * (dxhat * cache.xhat).sum(axis=axes)
        )
    return LayerGrads(dx.astype(DTYPE), {"gamma": d_gamma, "beta": d_beta})


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), DTYPE(0))


def relu_backward(x, d_output) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(as_tensor(x) > 0, as_tensor(d_output), DTYPE(0))


def global_avg_pool(x) -> np.ndarray:
    x = as_tensor(x)
    _check_nhwc(x)
    return x.mean(axis=(1, 2), keepdims=True, dtype=DTYPE)


def global_avg_pool_backward(input_shape, d_output) -> np.ndarray:
    n, h, w, c = input_shape
    d_output = as_tensor(d_output).reshape(n, 1, 1, c)
    return np.broadcast_to(d_output / DTYPE(h * w), (n, h, w, c)).copy()


def dense(x, weights, bias=None) -> np.ndarray:
    x, weights = as_tensor(x), as_tensor(weights)
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"input features (dim 1) = {x.shape[1]} but weights rows (dim 0) = {weights.shape[0]}")
    out = x @ weights
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match output width {weights.shape[1]}")
        out += bias
    return out


def dense_backward(x, weights, d_output, has_bias: bool = True) -> LayerGrads:
    x, weights, d_output = as_tensor(x), as_tensor(weights), as_tensor(d_output)
    if d_output.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"d_output shape {d_output.shape} != forward output shape {(x.shape[0], weights.shape[1])}")
    grads = {"weight": x.T @ d_output}
    if has_bias:
        grads["bias"] = d_output.sum(axis=0)
    return LayerGrads(d_output @ weights.T, grads)


def dropout(x, p: float, mode: Mode, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(out, mask)``; the mask already holds the 1/(1-p) scale."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if mode == "infer" or p == 0:
        return x.copy(), np.ones_like(x)
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(DTYPE) * DTYPE(1.0 / (1.0 - p))
    return x * mask, mask


def dropout_backward(mask, d_output) -> np.ndarray:
    return as_tensor(d_output) * mask


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under a row softmax.

    Returns ``(loss, probs, d_logits)`` with ``d_logits = (probs - onehot) / N``.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x k, got shape {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].astype(np.float64).mean())
    d_logits = probs.copy()
    d_logits[rows, labels] -= 1
    d_logits /= DTYPE(n)
    return loss, probs, d_logits
