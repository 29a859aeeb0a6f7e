"""Differentiable NCHW operators with hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor


def _require_ndim(t: Tensor, ndim: int, what: str) -> None:
    if t.ndim != ndim:
        raise ShapeError(f"{what} must have {ndim} dimensions, got shape {t.shape}")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------
def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _col2im(g: np.ndarray, weight: np.ndarray, stride: int, padding: int, h: int, w: int) -> np.ndarray:
    n, cout, ho, wo = g.shape
    _, cin, kh, kw = weight.shape
    dcols = g.transpose(0, 2, 3, 1).reshape(-1, cout) @ weight.reshape(cout, -1)
    dcols = np.ascontiguousarray(dcols.reshape(n, ho, wo, cin, kh, kw).transpose(4, 5, 0, 3, 1, 2))
    gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[i, j]
    return gxp[:, :, padding : padding + h, padding : padding + w]


def _conv_input_grad(g: np.ndarray, weight: np.ndarray, stride: int, padding: int, h: int, w: int) -> np.ndarray:
    if stride > 1:
        return _col2im(g, weight, stride, padding, h, w)
    # stride 1: correlate the padded output gradient with the flipped, transposed kernel
    n = g.shape[0]
    _, cin, kh, kw = weight.shape
    pads = [(kh - 1 - padding, kh - 1 - padding), (kw - 1 - padding, kw - 1 - padding)]
    gd = np.pad(g, ((0, 0), (0, 0)) + tuple((max(a, 0), max(b, 0)) for a, b in pads))
    if min(min(p) for p in pads) < 0:  # padding wider than the kernel: crop instead
        (a, b), (c, d) = pads
        gd = gd[:, :, max(-a, 0) : gd.shape[2] - max(-b, 0), max(-c, 0) : gd.shape[3] - max(-d, 0)]
    wt = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
    cols = _im2col(gd, kh, kw, 1, h, w)
    return np.ascontiguousarray((cols @ wt.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``(N, Cin, H, W)``, ``weight`` is ``(Cout, Cin, kh, kw)`` and the
    optional ``bias`` is ``(Cout,)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _require_ndim(x, 4, "conv2d input")
    _require_ndim(weight, 4, "conv2d weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channel dimension is {cin} but weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel height/width must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} or padding={padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias dimension is {bias.shape} but output channels are {cout}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input height/width {h}x{w}")

    w2 = weight.data.reshape(cout, -1)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            if pointwise:
                gx = np.ascontiguousarray((g2 @ w2).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
            else:
                gx = _conv_input_grad(g, weight.data, stride, padding, h, w)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


# --------------------------------------------------------------------------
# batch normalisation
# --------------------------------------------------------------------------
@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats, training: bool,
               eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel standardisation over N, H, W followed by an affine map.

    In training mode the batch statistics are used and ``running`` is updated
    in place as ``(1 - momentum) * running + momentum * batch`` (unbiased
    variance).  In eval mode ``running`` is read only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _require_ndim(x, 4, "batch_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: channel dimension is {c} but gamma/beta have shapes {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ValueError("batch_norm: eps must be positive")
    axes = (0, 2, 3)
    shp = (1, c, 1, 1)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        running.mean[:] = (1 - momentum) * running.mean + momentum * mean
        running.var[:] = (1 - momentum) * running.var + momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running.mean, running.var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shp)) * invstd.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shp)
            if training:
                m = x.data.size // c
                s1 = dxhat.sum(axis=axes).reshape(shp)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(shp)
                gx = (invstd.reshape(shp) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * invstd.reshape(shp)
        return gx, gg, gbeta

    return Tensor.from_op(out, (x, gamma, beta), backward)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------
def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor.from_op(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * expit(x.data),))


# --------------------------------------------------------------------------
# resampling and pooling
# --------------------------------------------------------------------------
@lru_cache(maxsize=256)
def interp_matrix(in_size: int, out_size: int) -> np.ndarray:
    """``(out_size, in_size)`` linear-interpolation matrix, half-pixel centres."""
    if out_size < 1 or in_size < 1:
        raise ShapeError(f"resize: sizes must be >= 1, got {in_size} -> {out_size}")
    mat = np.zeros((out_size, in_size))
    if in_size == out_size:
        np.fill_diagonal(mat, 1.0)
        mat.setflags(write=False)
        return mat
    scale = in_size / out_size
    for d in range(out_size):
        src = min(max((d + 0.5) * scale - 0.5, 0.0), in_size - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        mat[d, i0] += 1.0 - frac
        mat[d, i1] += frac
    mat.setflags(write=False)
    return mat


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (separable, half-pixel centres)."""
    x = as_tensor(x)
    _require_ndim(x, 4, "resize_bilinear input")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return Tensor.from_op(x.data.copy(), (x,), lambda g: (g,))
    ah = interp_matrix(h, out_h)
    aw = interp_matrix(w, out_w)
    out = ah @ x.data @ aw.T

    def backward(g):
        return (ah.T @ g @ aw,)

    return Tensor.from_op(out, (x,), backward)


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a plain array's last two axes (no graph)."""
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    return interp_matrix(h, out_h) @ arr @ interp_matrix(w, out_w).T


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _require_ndim(x, 4, "global_avg_pool input")
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def conv_gap(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``global_avg_pool(conv2d(x, weight, bias, stride=1, padding=k // 2))``
    evaluated from rectangle sums of ``x`` instead of a full convolution."""
    x, weight = as_tensor(x), as_tensor(weight)
    _require_ndim(x, 4, "conv_gap input")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv_gap: input channel dimension is {cin} but weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv_gap: kernel height/width must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    rows = [(max(0, i - ph), min(h, h + i - ph)) for i in range(kh)]
    cols = [(max(0, j - pw), min(w, w + j - pw)) for j in range(kw)]
    pre = np.zeros((n, cin, h + 1, w + 1))
    pre[:, :, 1:, 1:] = x.data.cumsum(axis=2).cumsum(axis=3)
    s = np.empty((n, cin, kh, kw))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            s[:, :, i, j] = pre[:, :, r1, c1] - pre[:, :, r0, c1] - pre[:, :, r1, c0] + pre[:, :, r0, c0]
    s /= h * w
    out = s.reshape(n, -1) @ weight.data.reshape(cout, -1).T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(n, cout, 1, 1)

    def backward(g):
        g2 = g.reshape(n, cout)
        gw = (g2.T @ s.reshape(n, -1)).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            ds = (g2 @ weight.data.reshape(cout, -1)).reshape(n, cin, kh, kw) / (h * w)
            diff = np.zeros((n, cin, h + 1, w + 1))
            for i, (r0, r1) in enumerate(rows):
                for j, (c0, c1) in enumerate(cols):
                    v = ds[:, :, i, j]
                    diff[:, :, r0, c0] += v
                    diff[:, :, r1, c0] -= v
                    diff[:, :, r0, c1] -= v
                    diff[:, :, r1, c1] += v
            gx = diff.cumsum(axis=2).cumsum(axis=3)[:, :, :h, :w]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)
