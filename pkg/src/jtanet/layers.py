"""Forward and reverse-mode kernels for the layer types used by the network.

Every layer is a pair of pure functions: a forward that returns its output
(plus whatever the backward needs) and a backward that maps an upstream
gradient to a :class:`LayerGrad`.  Tensors are plain ``numpy`` arrays.

Public functions take activations in ``(B, C, H, W)`` layout.  The model
itself runs on ``(C, B, H, W)`` ("channel-major") activations, which turns
each 3x3 tap of a convolution into a single matrix product without any
transposes; the ``*_cbhw`` helpers implement that layout and the public
functions are thin wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

Tensor = np.ndarray

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_TAPS = [(i, j) for i in range(3) for j in range(3)]


@dataclass
class LayerGrad:
    input_grad: Tensor
    param_grads: dict[str, Tensor] = field(default_factory=dict)


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains NaN or Inf")
    return x


def _as_float(x) -> Tensor:
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return x


def _active_taps(h: int, w: int):
    # on a 1-pixel axis only the centre tap sees non-padding data
    return [(i, j) for i, j in _TAPS if (h > 1 or i == 1) and (w > 1 or j == 1)]


def _tap_major(w: Tensor) -> Tensor:
    # (A, B, 3, 3) -> contiguous (3, 3, A, B) so each tap is a BLAS-ready matrix
    return np.ascontiguousarray(w.transpose(2, 3, 0, 1))


def _check_kernel(w: Tensor) -> None:
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"expected a (*, *, 3, 3) kernel, got {w.shape}")


# ---------------------------------------------------------------------------
# 3x3 / stride 1 / padding 1 correlation in channel-major layout


def conv_cbhw(x: Tensor, w: Tensor) -> Tensor:
    """Cross-correlate ``x`` (Ci, B, H, W) with ``w`` (Co, Ci, 3, 3)."""
    ci, b, h, wd = x.shape
    if w.shape[1] != ci:
        raise ShapeError(f"kernel expects {w.shape[1]} input channels, got {ci}")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wt = _tap_major(w)
    out = np.zeros((w.shape[0], b * h * wd), dtype=np.result_type(x, w))
    for i, j in _active_taps(h, wd):
        xs = xp[:, :, i:i + h, j:j + wd].reshape(ci, -1)
        out += wt[i, j] @ xs
    return out.reshape(w.shape[0], b, h, wd)


def conv_adjoint_cbhw(g: Tensor, w: Tensor) -> Tensor:
    """Adjoint of :func:`conv_cbhw` w.r.t. its input: (Co, B, H, W) -> (Ci, B, H, W)."""
    co, b, h, wd = g.shape
    if w.shape[0] != co:
        raise ShapeError(f"kernel produces {w.shape[0]} channels, gradient has {co}")
    ci = w.shape[1]
    g2 = g.reshape(co, -1)
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    outp = np.zeros((ci, b, h + 2, wd + 2), dtype=np.result_type(g, w))
    for i, j in _active_taps(h, wd):
        outp[:, :, i:i + h, j:j + wd] += (wt[i, j] @ g2).reshape(ci, b, h, wd)
    return outp[:, :, 1:-1, 1:-1]


def conv_weight_grad_cbhw(x: Tensor, g: Tensor) -> Tensor:
    """Gradient of ``<conv_cbhw(x, w), g>`` w.r.t. ``w``; shape (Co, Ci, 3, 3)."""
    ci, b, h, wd = x.shape
    co = g.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    g2 = g.reshape(co, -1)
    dw = np.zeros((3, 3, co, ci), dtype=np.result_type(x, g))
    for i, j in _active_taps(h, wd):
        xs = xp[:, :, i:i + h, j:j + wd].reshape(ci, -1)
        dw[i, j] = g2 @ xs.T
    return dw.transpose(2, 3, 0, 1).copy()


# ---------------------------------------------------------------------------
# public (B, C, H, W) API


def _to_cbhw(x: Tensor) -> Tensor:
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _to_bchw(x: Tensor) -> Tensor:
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def conv2d_forward(x: Tensor, w: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1, no bias.

    ``x`` is (B, C_in, H, W) and ``w`` is (C_out, C_in, 3, 3); spatial size is
    preserved.
    """
    x, w = _as_float(x), _as_float(w)
    _check_kernel(w)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got {x.shape}")
    check_finite(x, "conv2d input")
    return _to_bchw(conv_cbhw(_to_cbhw(x), w))


def conv2d_backward(x: Tensor, w: Tensor, grad_out: Tensor) -> LayerGrad:
    x, w, grad_out = _as_float(x), _as_float(w), _as_float(grad_out)
    _check_kernel(w)
    expected = (x.shape[0], w.shape[0], x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    xc, gc = _to_cbhw(x), _to_cbhw(grad_out)
    return LayerGrad(
        input_grad=_to_bchw(conv_adjoint_cbhw(gc, w)),
        param_grads={"weight": conv_weight_grad_cbhw(xc, gc)},
    )


def conv2d_transpose_forward(x: Tensor, w: Tensor) -> Tensor:
    """Transposed 3x3 convolution, stride 1, padding 1, no bias.

    ``w`` is laid out (C_in, C_out, 3, 3).  The result is the adjoint of
    :func:`conv2d_forward` applied with the same kernel, so
    ``<conv2d_forward(a, w), y> == <a, conv2d_transpose_forward(y, w)>``.
    """
    x, w = _as_float(x), _as_float(w)
    _check_kernel(w)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got {x.shape}")
    check_finite(x, "conv2d_transpose input")
    return _to_bchw(conv_adjoint_cbhw(_to_cbhw(x), w))


def conv2d_transpose_backward(x: Tensor, w: Tensor, grad_out: Tensor) -> LayerGrad:
    x, w, grad_out = _as_float(x), _as_float(w), _as_float(grad_out)
    _check_kernel(w)
    expected = (x.shape[0], w.shape[1], x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    xc, gc = _to_cbhw(x), _to_cbhw(grad_out)
    return LayerGrad(
        input_grad=_to_bchw(conv_cbhw(gc, w)),
        param_grads={"weight": conv_weight_grad_cbhw(gc, xc)},
    )


# ---------------------------------------------------------------------------
# batch normalisation


@dataclass
class BatchNormCache:
    xhat: Tensor
    inv_std: Tensor
    gamma: Tensor
    channel_axis: int
    mode: str
    running_mean: Tensor | None = None
    running_var: Tensor | None = None


def _bcast(v: Tensor, ndim: int, axis: int) -> Tensor:
    shape = [1] * ndim
    shape[axis] = -1
    return v.reshape(shape)


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
    channel_axis: int = 1,
) -> tuple[Tensor, BatchNormCache]:
    """Per-channel batch normalisation.

    In ``train`` mode the batch statistics (biased variance) normalise the
    input and the returned cache carries the updated running statistics;
    the inputs are never modified.  ``eval`` mode normalises with the running
    statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_float(x)
    axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    if gamma.shape != (x.shape[channel_axis],):
        raise ShapeError(f"gamma shape {gamma.shape} does not match {x.shape[channel_axis]} channels")
    new_mean = new_var = None
    if mode == "train":
        mean = x.mean(axis=axes)
        centered = x - _bcast(mean, x.ndim, channel_axis)
        var = (centered * centered).mean(axis=axes)
        n = x.size // x.shape[channel_axis]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
        centered = x - _bcast(mean, x.ndim, channel_axis)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * _bcast(inv_std, x.ndim, channel_axis)
    out = xhat * _bcast(gamma, x.ndim, channel_axis) + _bcast(beta, x.ndim, channel_axis)
    cache = BatchNormCache(xhat, inv_std, gamma, channel_axis, mode, new_mean, new_var)
    return out.astype(x.dtype, copy=False), cache


def batchnorm_backward(cache: BatchNormCache, grad_out: Tensor) -> LayerGrad:
    g = grad_out
    ax, nd = cache.channel_axis, g.ndim
    axes = tuple(a for a in range(nd) if a != ax)
    dbeta = g.sum(axis=axes)
    dgamma = (g * cache.xhat).sum(axis=axes)
    scale = _bcast(cache.gamma * cache.inv_std, nd, ax)
    if cache.mode == "eval":
        dx = g * scale
    else:
        n = g.size // g.shape[ax]
        dx = scale / n * (
            n * g
            - _bcast(dbeta, nd, ax)
            - cache.xhat * _bcast(dgamma, nd, ax)
        )
    return LayerGrad(dx, {"gamma": dgamma, "beta": dbeta})


# ---------------------------------------------------------------------------
# pointwise activations


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = _as_float(x)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(x: Tensor, grad_out: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    # subgradient at 0 is taken as 1
    return np.where(x >= 0, grad_out, slope * grad_out)


def tanh(x: Tensor) -> Tensor:
    return np.tanh(_as_float(x))


def tanh_backward(out: Tensor, grad_out: Tensor) -> Tensor:
    """Backward of tanh given its *output*."""
    return grad_out * (1.0 - out * out)


# ---------------------------------------------------------------------------
# pooling and upsampling over the last two axes


def maxpool2x2(x: Tensor) -> tuple[Tensor, Tensor]:
    """2x2 max pooling with stride 2 over the last two axes.

    Returns the pooled tensor and the flat in-window argmax (0..3, row-major),
    ties resolved to the first position in scan order.
    """
    x = _as_float(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even spatial dims, got {h}x{w}")
    lead = x.shape[:-2]
    win = x.reshape(*lead, h // 2, 2, w // 2, 2).swapaxes(-3, -2).reshape(*lead, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(idx: Tensor, grad_out: Tensor) -> Tensor:
    lead = grad_out.shape[:-2]
    h2, w2 = grad_out.shape[-2:]
    win = np.zeros((*lead, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, idx[..., None], grad_out[..., None], axis=-1)
    return win.reshape(*lead, h2, w2, 2, 2).swapaxes(-3, -2).reshape(*lead, 2 * h2, 2 * w2)


def bilinear_matrix(n: int, dtype=np.float64) -> Tensor:
    """(2n, n) linear map doubling a 1-D signal, half-pixel centres."""
    u = np.zeros((2 * n, n), dtype=dtype)
    for o in range(2 * n):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        lo = int(np.floor(src))
        frac = src - lo
        hi = min(lo + 1, n - 1)
        u[o, lo] += 1.0 - frac
        u[o, hi] += frac
    return u


def upsample_bilinear_2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of the last two axes (align_corners=False)."""
    x = _as_float(x)
    h, w = x.shape[-2:]
    uh, uw = bilinear_matrix(h, x.dtype), bilinear_matrix(w, x.dtype)
    return uh @ x @ uw.T


def upsample_bilinear_2x_backward(grad_out: Tensor) -> Tensor:
    h2, w2 = grad_out.shape[-2:]
    uh, uw = bilinear_matrix(h2 // 2, grad_out.dtype), bilinear_matrix(w2 // 2, grad_out.dtype)
    return uh.T @ grad_out @ uw
