"""Differentiable operations.

Every op accepts :class:`Tensor` or array-likes, computes its forward value
with numpy and, when recording, registers a closure mapping the output
gradient to one gradient per input.

Image ops accept a single ``C x H x W`` tensor or a batch ``B x C x H x W``;
point ops accept ``N x D`` or ``B x N x D``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, EmptyInputError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return make_result(
        "add", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return make_result(
        "sub", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return make_result(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_result("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return make_result("sqrt", out, (x,), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so neither branch overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


# --- reductions --------------------------------------------------------------

def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result("sum", np.asarray(out, dtype=np.float64), (x,), back)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    out = np.mean(x.data, axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_result("mean", np.asarray(out, dtype=np.float64), (x,), back)


# --- shape -------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x, start: int = 0) -> Tensor:
    """Collapse every axis from ``start`` onward into one."""
    x = as_tensor(x)
    return reshape(x, x.shape[:start] + (-1,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return make_result("concat", out, ts, lambda g: np.split(g, bounds, axis=axis))


def index(x, key) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[key], dtype=np.float64)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return make_result("index", out, (x,), back)


# --- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of ``m x k`` and ``k x n`` operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data
    return make_result("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def rowwise_matmul(x, w) -> Tensor:
    """``x @ w`` for ``x`` of shape ``(..., k)``, evaluated one row at a time.

    Each output row goes through an identical BLAS call, so its bits depend
    only on that input row. Batched gemm does not guarantee this, and the
    point branch relies on it for exact order invariance.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"rowwise_matmul: cannot multiply {x.shape} by {w.shape}")
    lead = x.shape[:-1]
    rows = x.data.reshape(-1, 1, x.shape[-1])
    out = np.matmul(rows, w.data)[:, 0, :].reshape(lead + (w.shape[1],))

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        x2 = x.data.reshape(-1, x.shape[-1])
        return ((g2 @ w.data.T).reshape(x.shape), x2.T @ g2)

    return make_result("rowwise_matmul", out, (x, w), back)


# --- image ops ---------------------------------------------------------------

def _as_batch(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"{op}: expected C x H x W or B x C x H x W input, got {x.shape}")


def conv2d(x, kernels, stride: int = 1, bias=None) -> Tensor:
    """Valid (unpadded) cross-correlation.

    ``kernels`` has shape ``F x C x kh x kw``; output spatial size is
    ``floor((H - kh) / stride) + 1`` (likewise for width).
    """
    x, k = as_tensor(x), as_tensor(kernels)
    xb, single = _as_batch(x, "conv2d")
    if k.ndim != 4:
        raise DimensionError(f"conv2d: kernels must be F x C x kh x kw, got {k.shape}")
    B, C, H, W = xb.shape
    F, Ck, kh, kw = k.shape
    if Ck != C:
        raise DimensionError(f"conv2d: input has {C} channels {x.shape}, kernels expect {Ck} {k.shape}")
    if kh > H or kw > W:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{W}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be positive, got {stride}")
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1

    win = sliding_window_view(xb, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, Ho, Wo, kh, kw) x (F, C, kh, kw) -> (B, Ho, Wo, F)
    out = np.tensordot(win, k.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    inputs = [x, k]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (F,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {F} kernels")
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]

    def back(g):
        gb = g[None] if single else g
        gk = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))
        gx = np.zeros_like(xb)
        he = stride * (Ho - 1) + 1
        we = stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                # (B, F, Ho, Wo) x (F, C) -> (B, Ho, Wo, C)
                contrib = np.tensordot(gb, k.data[:, :, i, j], axes=([1], [0]))
                gx[:, :, i:i + he:stride, j:j + we:stride] += contrib.transpose(0, 3, 1, 2)
        grads = [gx[0] if single else gx, gk]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return grads

    return make_result("conv2d", out, inputs, back)


def maxpool2d(x, window: int, stride: int | None = None) -> Tensor:
    """Per-window maximum; gradient goes to the first row-major argmax."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    xb, single = _as_batch(x, "maxpool2d")
    B, C, H, W = xb.shape
    if window > H or window > W:
        raise DimensionError(f"maxpool2d: window {window} exceeds spatial dims {H}x{W}")
    win = sliding_window_view(xb, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    flat = win.reshape(B, C, Ho, Wo, window * window)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    # flat input offsets of each window's winner
    r = np.arange(Ho)[:, None] * stride + arg // window
    c = np.arange(Wo)[None, :] * stride + arg % window
    plane = (np.arange(B)[:, None] * C + np.arange(C)[None, :])[:, :, None, None]
    src = (plane * H + r) * W + c

    def back(g):
        gb = g[None] if single else g
        gx = np.bincount(src.ravel(), weights=gb.ravel(), minlength=xb.size).reshape(xb.shape)
        return (gx[0] if single else gx,)

    return make_result("maxpool2d", np.ascontiguousarray(out), (x,), back)


def global_max_over_points(x) -> Tensor:
    """Column-wise maximum over the point axis (``N x D -> D``)."""
    x = as_tensor(x)
    if x.ndim not in (2, 3):
        raise DimensionError(f"global_max_over_points: expected N x D or B x N x D, got {x.shape}")
    axis = x.ndim - 2
    if x.shape[axis] == 0:
        raise EmptyInputError("global_max_over_points: no points")
    arg = np.argmax(x.data, axis=axis)
    out = np.max(x.data, axis=axis)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_result("global_max_over_points", out, (x,), back)
