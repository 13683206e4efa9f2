"""Forward/backward primitives, all plain numpy.

Convolutions are cross-correlations (no kernel flip) with zero
same-padding and stride 1, realized by gathering the kernel taps into
columns and running a single matmul per direction so BLAS sees one
large GEMM instead of many small ones. Every backward here is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from specgt.errors import DataValidationError, NumericalError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 cross-correlation.

    x: (batch, h, w, cin); w: (kh, kw, cin, cout); b: (cout,).
    Returns (y, cache) with y: (batch, h, w, cout).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DataValidationError("conv2d expects 4-D input and kernel")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        msg = f"input has {x.shape[3]} channels but kernel expects {cin}"
        raise DataValidationError(msg)
    if b.shape != (cout,):
        raise DataValidationError("bias shape must be (cout,)")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, H, W, _ = x.shape
    cols = np.empty((n, H, W, kh * kw * cin), dtype=x.dtype)
    t = 0
    for i in range(kh):
        for j in range(kw):
            cols[..., t : t + cin] = xp[:, i : i + H, j : j + W, :]
            t += cin
    y = cols.reshape(-1, kh * kw * cin) @ w.reshape(-1, cout)
    y = y.reshape(n, H, W, cout) + b
    return y, (cols, w, x.shape)


def conv2d_backward(cache, gy: np.ndarray):
    cols, w, x_shape = cache
    kh, kw, cin, cout = w.shape
    n, H, W, _ = x_shape
    ph, pw = kh // 2, kw // 2
    g2 = gy.reshape(-1, cout)
    gw = (cols.reshape(-1, kh * kw * cin).T @ g2).reshape(w.shape)
    gcols = (g2 @ w.reshape(-1, cout).T).reshape(n, H, W, kh * kw, cin)
    gxp = np.zeros((n, H + 2 * ph, W + 2 * pw, cin), dtype=gy.dtype)
    t = 0
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + H, j : j + W, :] += gcols[:, :, :, t, :]
            t += 1
    gb = gy.sum(axis=(0, 1, 2))
    gx = gxp[:, ph : ph + H, pw : pw + W, :]
    return gx, gw, gb


def batch_norm_forward(
    x: np.ndarray,
    gain: np.ndarray,
    shift: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
):
    """Per-channel normalization; channels live on the last axis.

    Train mode uses batch statistics (population variance, epsilon
    1e-5) and returns updated running stats with momentum 0.9; infer
    mode applies the running stats unchanged.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise DataValidationError("batch norm needs a batch of at least 2 in train mode")
        m = x.size // x.shape[-1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv
        y = gain * xhat + shift
        new_mean = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mean
        new_var = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var
        cache = (xhat, inv, gain, m)
        return y, cache, new_mean.astype(running_mean.dtype, copy=False), new_var.astype(running_var.dtype, copy=False)
    if mode == "infer":
        inv = 1.0 / np.sqrt(running_var + BN_EPS)
        y = gain * (x - running_mean) * inv + shift
        return y, None, running_mean, running_var
    raise DataValidationError(f"unknown mode {mode!r}")


def batch_norm_backward(cache, gy: np.ndarray):
    xhat, inv, gain, m = cache
    axes = tuple(range(gy.ndim - 1))
    ggain = (gy * xhat).sum(axis=axes)
    gshift = gy.sum(axis=axes)
    gxhat = gy * gain
    gx = (
        gxhat - gxhat.mean(axis=axes) - xhat * (gxhat * xhat).mean(axis=axes)
    ) * inv
    return gx, ggain, gshift


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), (x > 0)


def relu_backward(cache, gy: np.ndarray):
    return gy * cache


def dropout_forward(x: np.ndarray, rate: float, mode: str, rng=None):
    """Inverted dropout; identity at rate 0 or in infer mode.

    The generator is only consumed when a mask is actually drawn, so
    rate-0 configurations leave random streams untouched.
    """
    if not (0.0 <= rate < 1.0):
        raise DataValidationError("dropout rate must be in [0, 1)")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise DataValidationError(f"unknown mode {mode!r}")
    if rng is None:
        raise DataValidationError("train-mode dropout needs a generator")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(cache, gy: np.ndarray):
    if cache is None:
        return gy
    keep, scale = cache
    return gy * keep * scale


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        msg = f"dense input {x.shape} incompatible with weights {w.shape}"
        raise DataValidationError(msg)
    return x @ w + b, (x, w)


def dense_backward(cache, gy: np.ndarray):
    x, w = cache
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy and its gradient with respect to the logits.

    grad = (softmax(logits) - onehot(labels)) / batch, the textbook
    fused form, so no separate softmax backward is needed.
    """
    if logits.ndim != 2:
        raise DataValidationError("logits must be batch x classes")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise DataValidationError("one label per row required")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DataValidationError("label out of range for logit width")
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits")
    p = softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    eps = np.finfo(p.dtype).tiny
    loss = float(-np.log(np.maximum(p[rows, labels], eps)).mean())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad
