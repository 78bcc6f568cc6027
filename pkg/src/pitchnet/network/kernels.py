"""Forward and backward kernels over ``(batch, channels, length)`` arrays.

Every kernel is dtype-preserving so the same code runs in float32 for
training and inference and in float64 for gradient checking.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPSILON = 1e-5


def _check3(x, name="input"):
    if x.ndim != 3:
        raise ValueError(f"{name} must have shape (batch, channels, length), got {x.shape}")


def conv1d_valid(x, weight, bias, stride=1):
    """Unpadded cross-correlation.

    ``weight`` has shape ``(out_channels, in_channels, kernel)``; the output
    length is ``(length - kernel) // stride + 1``.
    """
    _check3(x)
    out_ch, in_ch, k = weight.shape
    if x.shape[1] != in_ch:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {in_ch}")
    if x.shape[2] < k:
        raise ValueError(f"kernel of size {k} longer than input of length {x.shape[2]}")
    if bias.shape != (out_ch,):
        raise ValueError(f"bias shape {bias.shape} does not match {out_ch} output channels")
    b = x.shape[0]
    l_out = (x.shape[2] - k) // stride + 1
    length = x.shape[2]
    if in_ch == 1:
        # Raw waveform input: (O, K) @ (B, K, L_out) lands directly in output layout.
        cols = sliding_window_view(x[:, 0], k, axis=1)[:, ::stride].transpose(0, 2, 1)
        out = np.matmul(weight[:, 0], np.ascontiguousarray(cols))
        out += bias[None, :, None]
        return out
    if stride == 1 and length * out_ch < l_out * in_ch:
        # Few output channels over long inputs: one GEMM against every tap,
        # (B * L, C) @ (C, K * O), then shift-and-add. Avoids a K-fold copy.
        rows = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(b * length, in_ch)
        taps = rows @ np.ascontiguousarray(weight.transpose(1, 2, 0)).reshape(in_ch, k * out_ch)
        taps = taps.reshape(b, length, k, out_ch)
        out = taps[:, 0:l_out, 0].copy()
        for tap in range(1, k):
            out += taps[:, tap:tap + l_out, tap]
    else:
        # im2col: (B * L_out, C * K) @ (C * K, O)
        out = _im2col(x, k, stride) @ weight.reshape(out_ch, in_ch * k).T
        out = out.reshape(b, l_out, out_ch)
    return np.ascontiguousarray(out.transpose(0, 2, 1) + bias[None, :, None])


def _im2col(x, k, stride):
    cols = sliding_window_view(x, k, axis=2)[:, :, ::stride]  # (B, C, L_out, K)
    b, c, l_out, _ = cols.shape
    return cols.transpose(0, 2, 1, 3).reshape(b * l_out, c * k)


def conv1d_valid_backward(grad_out, x, weight, stride=1, need_input_grad=True):
    """Gradients of :func:`conv1d_valid` w.r.t. input, weight and bias.

    The input gradient is ``None`` when ``need_input_grad`` is false.
    """
    out_ch, in_ch, k = weight.shape
    b, _, l_out = grad_out.shape
    g2 = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(b * l_out, out_ch)
    grad_weight = (g2.T @ _im2col(x, k, stride)).reshape(out_ch, in_ch, k)
    grad_bias = grad_out.sum(axis=(0, 2))
    if not need_input_grad:
        return None, grad_weight, grad_bias

    length = x.shape[2]
    if l_out <= k:
        # short outputs (e.g. the classification head): scatter taps back (col2im)
        grad_patches = (g2 @ weight.reshape(out_ch, in_ch * k)).reshape(b, l_out, in_ch, k)
        grad_x = np.zeros_like(x)
        span = stride * (l_out - 1) + 1
        for tap in range(k):
            grad_x[:, :, tap:tap + span:stride] += grad_patches[:, :, :, tap].transpose(0, 2, 1)
        return grad_x, grad_weight, grad_bias

    # Otherwise a full correlation of the (stride-dilated) output gradient
    # with the flipped, channel-transposed kernel.
    dilated = np.zeros((b, out_ch, stride * (l_out - 1) + 1), dtype=grad_out.dtype)
    dilated[:, :, ::stride] = grad_out
    right = length - dilated.shape[2]  # >= k - 1
    padded = np.pad(dilated, ((0, 0), (0, 0), (k - 1, right)))
    flipped = np.ascontiguousarray(weight[:, :, ::-1].transpose(1, 0, 2)).reshape(in_ch, out_ch * k)
    grad_x = (_im2col(padded, k, 1) @ flipped.T).reshape(b, length, in_ch).transpose(0, 2, 1)
    return np.ascontiguousarray(grad_x), grad_weight, grad_bias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def _pool_windows(x, size, stride):
    if size > x.shape[2]:
        raise ValueError(f"pool size {size} exceeds length {x.shape[2]}")
    return sliding_window_view(x, size, axis=2)[:, :, ::stride]


def max_pool1d(x, size, stride):
    _check3(x)
    if size > x.shape[2]:
        raise ValueError(f"pool size {size} exceeds length {x.shape[2]}")
    n = (x.shape[2] - size) // stride + 1
    span = stride * (n - 1) + 1
    out = x[:, :, 0:span:stride].copy()
    for j in range(1, size):
        np.maximum(out, x[:, :, j:j + span:stride], out=out)
    return out


def max_pool1d_backward(grad_out, x, size, stride):
    # Gradient goes to the first maximal element of each window.
    winner = _pool_windows(x, size, stride).argmax(axis=3)
    grad_x = np.zeros_like(x)
    span = stride * (grad_out.shape[2] - 1) + 1
    for j in range(size):
        grad_x[:, :, j:j + span:stride] += grad_out * (winner == j)
    return grad_x


def layer_norm(x, gain, shift, eps=EPSILON):
    """Normalize each batch item over channels and length, then scale per channel."""
    _check3(x)
    if gain.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ValueError(f"gain/shift must have shape ({x.shape[1]},)")
    out = x - x.mean(axis=(1, 2), keepdims=True)
    var = np.einsum("bcl,bcl->b", out, out) / (x.shape[1] * x.shape[2])
    out *= gain[None, :, None] / np.sqrt(var + eps)[:, None, None].astype(x.dtype)
    out += shift[None, :, None]
    return out


def layer_norm_backward(grad_out, x, gain, eps=EPSILON):
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    grad_gain = (grad_out * xhat).sum(axis=(0, 2))
    grad_shift = grad_out.sum(axis=(0, 2))
    g = grad_out * gain[None, :, None]
    grad_x = inv_std * (
        g - g.mean(axis=(1, 2), keepdims=True) - xhat * (g * xhat).mean(axis=(1, 2), keepdims=True)
    )
    return grad_x, grad_gain, grad_shift


def batch_norm(x, gain, shift, eps=EPSILON, mean=None, var=None):
    """Per-channel normalization over batch and length.

    With ``mean``/``var`` given (inference) those statistics are used;
    otherwise they are computed from ``x``.
    """
    _check3(x)
    if mean is None:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
    xhat = (x - mean[None, :, None]) / np.sqrt(var[None, :, None] + eps)
    return xhat * gain[None, :, None] + shift[None, :, None]


def batch_norm_backward(grad_out, x, gain, eps=EPSILON):
    mean = x.mean(axis=(0, 2), keepdims=True)
    var = x.var(axis=(0, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    grad_gain = (grad_out * xhat).sum(axis=(0, 2))
    grad_shift = grad_out.sum(axis=(0, 2))
    g = grad_out * gain[None, :, None]
    grad_x = inv_std * (
        g - g.mean(axis=(0, 2), keepdims=True) - xhat * (g * xhat).mean(axis=(0, 2), keepdims=True)
    )
    return grad_x, grad_gain, grad_shift


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
