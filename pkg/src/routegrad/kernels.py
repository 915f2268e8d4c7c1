"""Forward/backward numeric kernels over dense numpy arrays.

Every kernel is a pure function. Forward functions return ``(output, cache)``;
backward functions take the upstream gradient plus that cache and return
gradients shaped like the corresponding forward inputs.

Conventions: convolution is cross-correlation (no kernel flip), max-pool ties
go to the first row-major maximum in the window, and the ReLU subgradient at
exactly zero is zero.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEBUG = os.environ.get("ROUTEGRAD_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    """Raised when kernel inputs have incompatible shapes."""

    def __init__(self, kernel: str, message: str):
        super().__init__(f"{kernel}: {message}")
        self.kernel = kernel


def _check_finite(kernel: str, *arrays: np.ndarray) -> None:
    if not DEBUG:
        return
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise FloatingPointError(f"{kernel}: non-finite values in output")


def _expect_shape(kernel: str, what: str, got, want) -> None:
    if tuple(got) != tuple(want):
        raise ShapeError(kernel, f"{what} has shape {tuple(got)}, expected {tuple(want)}")


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Rows are output positions (n, i, j); columns are (c, di, dj)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0):
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError("conv2d", f"input has {c} channels but weight expects {cw}")
    _expect_shape("conv2d", "bias", bias.shape, (k,))
    if stride < 1:
        raise ShapeError("conv2d", f"stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    out = cols @ weight.reshape(k, -1).T
    out += bias
    y = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    _check_finite("conv2d", y)
    return y, (cols, x.shape, stride, pad)


def conv2d_backward(upstream: np.ndarray, cache, weight: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_input, grad_weight, grad_bias)``; grad_input is None if not requested."""
    cols, in_shape, stride, pad = cache
    n, c, h, w = in_shape
    k, _, kh, kw = weight.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    _expect_shape("conv2d_backward", "upstream", upstream.shape, (n, k, ho, wo))
    g2d = upstream.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
    grad_w = (g2d.T @ cols).reshape(weight.shape)
    grad_b = g2d.sum(axis=0)
    grad_x = conv2d_input_grad(upstream, in_shape, weight, stride, pad) if need_input_grad else None
    _check_finite("conv2d_backward", grad_x, grad_w, grad_b)
    return grad_x, grad_w, grad_b


def conv2d_input_grad(upstream: np.ndarray, in_shape, weight: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = in_shape
    k, _, kh, kw = weight.shape
    ho, wo = upstream.shape[2], upstream.shape[3]
    g2d = upstream.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
    gcols = (g2d @ weight.reshape(k, -1)).reshape(n, ho, wo, c, kh, kw)
    gpad = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=upstream.dtype)
    for di in range(kh):
        for dj in range(kw):
            gpad[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += (
                gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            )
    if pad:
        return gpad[:, :, pad:pad + h, pad:pad + w]
    return gpad


def conv2d_param_grads(upstream: np.ndarray, cache, weight: np.ndarray):
    cols = cache[0]
    k = weight.shape[0]
    g2d = upstream.transpose(0, 2, 3, 1).reshape(-1, k)
    return (g2d.T @ cols).reshape(weight.shape), g2d.sum(axis=0)


# ---------------------------------------------------------------------------
# maxpool2d
# ---------------------------------------------------------------------------

def maxpool2d_forward(x: np.ndarray, window: int, stride: int):
    if window < 1 or stride < 1:
        raise ShapeError("maxpool2d", f"window and stride must be >= 1, got {window}, {stride}")
    if x.ndim != 4:
        raise ShapeError("maxpool2d", f"expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError("maxpool2d", f"window {window} larger than input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if window == stride:
        crop = x[:, :, :ho * window, :wo * window]
        blocks = crop.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
        flat = blocks.reshape(n, c, ho, wo, window * window)
    else:
        win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
        flat = win.reshape(n, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (idx, x.shape, window, stride)


def maxpool2d_backward(upstream: np.ndarray, cache) -> np.ndarray:
    idx, in_shape, window, stride = cache
    n, c, h, w = in_shape
    ho, wo = idx.shape[2], idx.shape[3]
    _expect_shape("maxpool2d_backward", "upstream", upstream.shape, (n, c, ho, wo))
    grad = np.zeros(in_shape, dtype=upstream.dtype)
    if window == stride:
        blocks = np.zeros((n, c, ho, wo, window * window), dtype=upstream.dtype)
        np.put_along_axis(blocks, idx[..., None], upstream[..., None], axis=-1)
        blocks = blocks.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        grad[:, :, :ho * window, :wo * window] = blocks.reshape(n, c, ho * window, wo * window)
        return grad
    # overlapping windows accumulate
    for k in range(window * window):
        di, dj = divmod(k, window)
        grad[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += np.where(idx == k, upstream, 0)
    return grad


# ---------------------------------------------------------------------------
# dense kernels
# ---------------------------------------------------------------------------

def matmul_forward(x: np.ndarray, weight: np.ndarray):
    """``x @ weight.T`` with weight stored as ``[out, in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("matmul", f"cannot multiply {x.shape} by weight {weight.shape}")
    y = x @ weight.T
    _check_finite("matmul", y)
    return y, x


def matmul_backward(upstream: np.ndarray, cache, weight: np.ndarray, need_input_grad: bool = True):
    x = cache
    _expect_shape("matmul_backward", "upstream", upstream.shape, (x.shape[0], weight.shape[0]))
    grad_w = upstream.T @ x
    grad_x = upstream @ weight if need_input_grad else None
    return grad_x, grad_w


def add_bias_forward(x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Add a per-feature (2-d input) or per-channel (4-d input) bias."""
    if x.ndim == 2:
        _expect_shape("add_bias", "bias", bias.shape, (x.shape[1],))
        return x + bias
    if x.ndim == 4:
        _expect_shape("add_bias", "bias", bias.shape, (x.shape[1],))
        return x + bias[None, :, None, None]
    raise ShapeError("add_bias", f"unsupported input rank {x.ndim}")


def add_bias_backward(upstream: np.ndarray) -> np.ndarray:
    if upstream.ndim == 2:
        return upstream.sum(axis=0)
    return upstream.sum(axis=(0, 2, 3))


def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), mask


def relu_backward(upstream: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return upstream * mask


def flatten_forward(x: np.ndarray):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(upstream: np.ndarray, in_shape) -> np.ndarray:
    return upstream.reshape(in_shape)


def global_avg_pool_forward(x: np.ndarray):
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", f"expected 4-d input, got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(upstream: np.ndarray, in_shape) -> np.ndarray:
    n, c, h, w = in_shape
    _expect_shape("global_avg_pool_backward", "upstream", upstream.shape, (n, c))
    scaled = upstream / (h * w)
    return np.broadcast_to(scaled[:, :, None, None], in_shape).copy()


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_forward(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch. Returns ``(loss, cache)``."""
    if logits.ndim != 2:
        raise ShapeError("softmax_xent", f"expected [N, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("softmax_xent", f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise IndexError(f"softmax_xent: label {int(bad)} outside [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    return loss, (z, log_norm, labels)


def softmax_xent_backward(cache, scale: float = 1.0) -> np.ndarray:
    """Gradient of ``scale * loss`` w.r.t. the logits."""
    z, log_norm, labels = cache
    n = z.shape[0]
    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(n), labels] -= 1.0
    return probs * (scale / n)
