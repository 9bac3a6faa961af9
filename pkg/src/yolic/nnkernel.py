"""Dense NCHW tensor kernels with exact analytic gradients.

Pure functions over numpy arrays: convolution (im2col), depthwise
convolution, channel shuffle, batch norm, pooling, activations, fully
connected, and dropout. Forward kernels return outputs (plus whatever the
matching backward needs); backward kernels return input/parameter gradients.

Everything runs in the dtype of its inputs — float32 for training, float64
for finite-difference checks. No hidden global RNG: dropout derives its mask
from an explicit counter-based key.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "set_debug_checks",
    "conv_out_size",
    "conv2d",
    "conv2d_backward",
    "depthwise_conv2d",
    "depthwise_conv2d_backward",
    "channel_shuffle",
    "channel_shuffle_backward",
    "batchnorm2d",
    "batchnorm2d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "global_avg_pool",
    "global_avg_pool_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "linear",
    "linear_backward",
    "dropout_mask",
    "dropout",
    "dropout_backward",
]

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every kernel (debug aid, off by default)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _checked(name: str, arr: np.ndarray) -> np.ndarray:
    if _DEBUG_CHECKS and not np.isfinite(arr).all():
        raise FloatingPointError(f"{name}: non-finite values in output")
    return arr


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# im2col plumbing (shared by conv, depthwise conv, and maxpool)

def _pad_hw(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(
        x,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        mode="constant",
        constant_values=value,
    )


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            pad_value: float = 0.0) -> np.ndarray:
    """(B,C,H,W) -> (B, C, kh*kw, Hout*Wout) patch matrix."""
    b, c, h, w = x.shape
    hout = conv_out_size(h, kh, stride, padding)
    wout = conv_out_size(w, kw, stride, padding)
    xp = _pad_hw(x, padding, pad_value)
    cols = np.empty((b, c, kh * kw, hout, wout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[:, :, i : i + stride * hout : stride,
                                        j : j + stride * wout : stride]
    return cols.reshape(b, c, kh * kw, hout * wout)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int,
            padding: int) -> np.ndarray:
    """Scatter-add the transpose of _im2col: (B,C,kh*kw,L) -> (B,C,H,W)."""
    b, c, h, w = x_shape
    hout = conv_out_size(h, kh, stride, padding)
    wout = conv_out_size(w, kw, stride, padding)
    cols = cols.reshape(b, c, kh * kw, hout, wout)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * hout : stride, j : j + stride * wout : stride] += cols[
                :, :, i * kw + j
            ]
    if padding:
        return xp[:, :, padding:-padding, padding:-padding]
    return xp


# ---------------------------------------------------------------------------
# convolution (cross-correlation, zero padding)

def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard convolution. x (B,Cin,H,W), weight (Cout,Cin,kh,kw)."""
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels, weight expects {cin_w}")
    hout = conv_out_size(h, kh, stride, padding)
    wout = conv_out_size(w, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding).reshape(b, cin * kh * kw, hout * wout)
    wmat = weight.reshape(cout, cin * kh * kw)
    y = np.matmul(wmat, cols)  # (B, Cout, L)
    if bias is not None:
        y += bias[None, :, None]
    return _checked("conv2d", y.reshape(b, cout, hout, wout))


def conv2d_backward(x: np.ndarray, weight: np.ndarray, grad_y: np.ndarray,
                    stride: int = 1, padding: int = 0, with_bias: bool = True):
    """Returns (grad_x, grad_weight, grad_bias)."""
    b, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    gy = grad_y.reshape(b, cout, -1)  # (B, Cout, L)
    cols = _im2col(x, kh, kw, stride, padding).reshape(b, cin * kh * kw, -1)
    grad_w = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    grad_b = gy.sum(axis=(0, 2)) if with_bias else None
    wmat = weight.reshape(cout, cin * kh * kw)
    grad_cols = np.matmul(wmat.T, gy)  # (B, Cin*kh*kw, L)
    grad_x = _col2im(grad_cols.reshape(b, cin, kh * kw, -1), x.shape, kh, kw, stride, padding)
    return _checked("conv2d_backward", grad_x), grad_w, grad_b


def depthwise_conv2d(x: np.ndarray, weight: np.ndarray, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Depthwise convolution (groups == channels). weight (C, kh, kw)."""
    b, c, h, w = x.shape
    cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"input has {c} channels, depthwise weight has {cw}")
    hout = conv_out_size(h, kh, stride, padding)
    wout = conv_out_size(w, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding)  # (B, C, k2, L)
    y = np.einsum("bckl,ck->bcl", cols, weight.reshape(c, kh * kw))
    return _checked("depthwise_conv2d", y.reshape(b, c, hout, wout))


def depthwise_conv2d_backward(x: np.ndarray, weight: np.ndarray, grad_y: np.ndarray,
                              stride: int = 1, padding: int = 0):
    """Returns (grad_x, grad_weight)."""
    b, c, h, w = x.shape
    _, kh, kw = weight.shape
    gy = grad_y.reshape(b, c, -1)  # (B, C, L)
    cols = _im2col(x, kh, kw, stride, padding)  # (B, C, k2, L)
    grad_w = np.einsum("bckl,bcl->ck", cols, gy).reshape(weight.shape)
    grad_cols = np.einsum("ck,bcl->bckl", weight.reshape(c, kh * kw), gy)
    grad_x = _col2im(grad_cols, x.shape, kh, kw, stride, padding)
    return _checked("depthwise_conv2d_backward", grad_x), grad_w


# ---------------------------------------------------------------------------
# channel shuffle

def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Permute channels: position (g, j) in a groups x (C/groups) grid moves
    to (j, g). Pure permutation, value-preserving."""
    b, c, h, w = x.shape
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible by {groups} groups")
    y = x.reshape(b, groups, c // groups, h, w).transpose(0, 2, 1, 3, 4).reshape(b, c, h, w)
    return np.ascontiguousarray(y)


def channel_shuffle_backward(grad_y: np.ndarray, groups: int) -> np.ndarray:
    """Inverse permutation: shuffle with the transposed grid."""
    c = grad_y.shape[1]
    return channel_shuffle(grad_y, c // groups)


# ---------------------------------------------------------------------------
# batch normalization

BN_EPS = 1e-5


def batchnorm2d(x, gamma, beta, running_mean, running_var, training: bool,
                momentum: float = 0.1, eps: float = BN_EPS):
    """Per-channel batch norm over (B, H, W).

    Train mode normalizes by batch statistics and updates the running stats
    in place (unbiased variance, momentum 0.1). Eval mode uses running stats.
    Returns (y, cache) where cache feeds batchnorm2d_backward.
    """
    b, c, h, w = x.shape
    if training:
        if b * h * w == 0:
            raise ValueError("batch norm in train mode needs a non-empty batch")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))  # biased, used for normalization
        n = b * h * w
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, training)
    return _checked("batchnorm2d", y), cache


def batchnorm2d_backward(grad_y: np.ndarray, cache):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma, training = cache
    grad_gamma = (grad_y * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_y.sum(axis=(0, 2, 3))
    if not training:
        grad_x = grad_y * (gamma * inv_std)[None, :, None, None]
        return _checked("batchnorm2d_backward", grad_x), grad_gamma, grad_beta
    b, c, h, w = grad_y.shape
    n = b * h * w
    gxhat = grad_y * gamma[None, :, None, None]
    sum_g = gxhat.sum(axis=(0, 2, 3))
    sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))
    grad_x = (inv_std[None, :, None, None] / n) * (
        n * gxhat - sum_g[None, :, None, None] - xhat * sum_gx[None, :, None, None]
    )
    return _checked("batchnorm2d_backward", grad_x), grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pooling

def maxpool2d(x: np.ndarray, kernel: int, stride: int, padding: int = 0):
    """Max pooling; padding uses -inf so padded positions never win.
    Returns (y, argmax) with argmax indices into the kernel window (ties go
    to the first position, deterministically)."""
    b, c, h, w = x.shape
    hout = conv_out_size(h, kernel, stride, padding)
    wout = conv_out_size(w, kernel, stride, padding)
    cols = _im2col(x, kernel, kernel, stride, padding, pad_value=-np.inf)
    arg = cols.argmax(axis=2)  # (B, C, L)
    y = np.take_along_axis(cols, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return _checked("maxpool2d", y.reshape(b, c, hout, wout)), arg


def maxpool2d_backward(grad_y: np.ndarray, argmax: np.ndarray, x_shape,
                       kernel: int, stride: int, padding: int = 0) -> np.ndarray:
    b, c, h, w = x_shape
    l = argmax.shape[-1]
    gy = grad_y.reshape(b, c, l)
    cols = np.zeros((b, c, kernel * kernel, l), dtype=grad_y.dtype)
    np.put_along_axis(cols, argmax[:, :, None, :], gy[:, :, None, :], axis=2)
    return _checked(
        "maxpool2d_backward", _col2im(cols, x_shape, kernel, kernel, stride, padding)
    )


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(B,C,H,W) -> (B,C)."""
    return _checked("global_avg_pool", x.mean(axis=(2, 3)))


def global_avg_pool_backward(grad_y: np.ndarray, x_shape) -> np.ndarray:
    b, c, h, w = x_shape
    return np.broadcast_to(grad_y[:, :, None, None] / (h * w), x_shape).astype(grad_y.dtype).copy()


# ---------------------------------------------------------------------------
# activations and fully connected

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_y * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable split over sign
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _checked("sigmoid", out)


def sigmoid_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_y * y * (1.0 - y)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """x (B, in), weight (out, in)."""
    y = x @ weight.T
    if bias is not None:
        y += bias
    return _checked("linear", y)


def linear_backward(x: np.ndarray, weight: np.ndarray, grad_y: np.ndarray,
                    with_bias: bool = True):
    grad_w = grad_y.T @ x
    grad_b = grad_y.sum(axis=0) if with_bias else None
    grad_x = grad_y @ weight
    return _checked("linear_backward", grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# dropout (counter-based RNG: reproducible for a fixed (seed, layer, step))

def dropout_mask(shape, rate: float, seed: int, layer_id: int, step: int) -> np.ndarray:
    """Keep-mask drawn from a Philox stream keyed by (seed, layer_id, step)."""
    key = (np.uint64(seed) << np.uint64(32)) ^ (np.uint64(layer_id) << np.uint64(16)) ^ np.uint64(step)
    rng = np.random.Generator(np.random.Philox(key=int(key)))
    return rng.random(shape) >= rate


def dropout(x: np.ndarray, rate: float, seed: int, layer_id: int, step: int,
            training: bool):
    """Inverted-scaling dropout at train time, identity at eval.
    Returns (y, mask)."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = dropout_mask(x.shape, rate, seed, layer_id, step)
    return _checked("dropout", x * mask / (1.0 - rate)), mask


def dropout_backward(grad_y: np.ndarray, mask: np.ndarray | None, rate: float) -> np.ndarray:
    if mask is None:
        return grad_y
    return grad_y * mask / (1.0 - rate)
