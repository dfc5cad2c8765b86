"""Dense numerical kernels on float64 NCHW arrays.

Every network in the package is assembled from the functions here. Tensors
are plain ``numpy.ndarray`` objects in double precision, laid out as
``(batch, channels, height, width)`` for images and ``(batch, features)``
for dense activations. All kernels are pure; batch-norm running statistics
are the only mutable state and they are passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "ConvGeometry",
    "conv_output_extent",
    "conv2d_forward",
    "conv2d_backward",
    "conv2d_backward_input",
    "conv2d_backward_filters",
    "conv2d_transpose_forward",
    "conv2d_transpose_backward",
    "transpose_output_extent",
    "maxpool2d",
    "maxpool2d_backward",
    "upsample2d_nearest",
    "upsample2d_nearest_backward",
    "global_avgpool2d",
    "global_avgpool2d_backward",
    "dense_forward",
    "dense_backward",
    "BatchNormState",
    "batchnorm_forward",
    "batchnorm_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "softmax",
    "softmax_backward",
    "dropout",
    "categorical_cross_entropy",
    "binary_cross_entropy",
    "mse_metric",
]

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99
PROB_CLIP = 1e-7


class DimensionError(ValueError):
    """Raised when tensor shapes are inconsistent for a kernel."""


@dataclass(frozen=True)
class ConvGeometry:
    """Stride and padding of a 2-D convolution.

    ``padding="same"`` pads symmetrically with zeros, putting the odd extra
    cell on the bottom/right; ``"valid"`` does not pad at all.
    """

    stride_h: int = 1
    stride_w: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError(f"strides must be positive, got {self.stride_h}x{self.stride_w}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")

    @classmethod
    def square(cls, stride: int = 1, padding: str = "same") -> "ConvGeometry":
        return cls(stride, stride, padding)


def conv_output_extent(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` along one spatial axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        before = total // 2
        return out, before, total - before
    out = (size - k) // stride + 1
    if out < 1:
        raise DimensionError(f"valid convolution of extent {size} with kernel {k} is empty")
    return out, 0, 0


def transpose_output_extent(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return size * stride
    return (size - 1) * stride + k


def _check_conv(x: np.ndarray, w: np.ndarray, x_axis: int, w_axis: int, what: str):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"{what}: expected 4-D input and filters, got input {x.shape} and filters {w.shape}"
        )
    if x.shape[x_axis] != w.shape[w_axis]:
        raise DimensionError(
            f"{what}: channel mismatch between input {x.shape} and filters {w.shape}"
        )


def _geometry(x_shape, w_shape, geom: ConvGeometry):
    _, _, h, w = x_shape
    kh, kw = w_shape[2], w_shape[3]
    ho, pt, pb = conv_output_extent(h, kh, geom.stride_h, geom.padding)
    wo, pl, pr = conv_output_extent(w, kw, geom.stride_w, geom.padding)
    return ho, wo, (pt, pb), (pl, pr)


def _windows(x, w_shape, geom):
    ho, wo, ph, pw = _geometry(x.shape, w_shape, geom)
    kh, kw = w_shape[2], w_shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw)) if any(ph + pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * geom.stride_h + 1 : geom.stride_h, : (wo - 1) * geom.stride_w + 1 : geom.stride_w]
    return win  # (B, C, Ho, Wo, kh, kw)


def conv2d_forward(x: np.ndarray, filters: np.ndarray, bias: np.ndarray | None, geom: ConvGeometry) -> np.ndarray:
    """Cross-correlate ``x`` (B,C,H,W) with ``filters`` (N,C,kh,kw), add ``bias`` (N,)."""
    _check_conv(x, filters, 1, 1, "conv2d_forward")
    win = _windows(x, filters.shape, geom)
    out = np.tensordot(win, filters, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, N)
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (filters.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} does not match filters {filters.shape}")
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward_input(upstream: np.ndarray, filters: np.ndarray, input_shape, geom: ConvGeometry) -> np.ndarray:
    """Adjoint of :func:`conv2d_forward` with respect to its input."""
    b, c, h, w = input_shape
    ho, wo, ph, pw = _geometry(input_shape, filters.shape, geom)
    if upstream.shape != (b, filters.shape[0], ho, wo):
        raise DimensionError(
            f"upstream {upstream.shape} inconsistent with input {tuple(input_shape)} and filters {filters.shape}"
        )
    kh, kw = filters.shape[2], filters.shape[3]
    sh, sw = geom.stride_h, geom.stride_w
    grad = np.zeros((b, c, h + ph[0] + ph[1], w + pw[0] + pw[1]))
    cols = np.tensordot(upstream, filters, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (B, C, kh, kw, Ho, Wo)
    for i in range(kh):
        for j in range(kw):
            grad[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[:, :, i, j]
    return grad[:, :, ph[0] : ph[0] + h, pw[0] : pw[0] + w]


def conv2d_backward_filters(upstream: np.ndarray, x: np.ndarray, filter_shape, geom: ConvGeometry) -> np.ndarray:
    win = _windows(x, filter_shape, geom)
    if upstream.shape[2:] != win.shape[2:4] or upstream.shape[0] != x.shape[0]:
        raise DimensionError(f"upstream {upstream.shape} inconsistent with input {x.shape}")
    return np.tensordot(upstream, win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d_backward(upstream: np.ndarray, x: np.ndarray, filters: np.ndarray, geom: ConvGeometry):
    """Return ``(grad_input, grad_filters, grad_bias)`` for :func:`conv2d_forward`."""
    _check_conv(x, filters, 1, 1, "conv2d_backward")
    grad_input = conv2d_backward_input(upstream, filters, x.shape, geom)
    grad_filters = conv2d_backward_filters(upstream, x, filters.shape, geom)
    return grad_input, grad_filters, upstream.sum(axis=(0, 2, 3))


def conv2d_transpose_forward(x: np.ndarray, filters: np.ndarray, bias: np.ndarray | None, geom: ConvGeometry) -> np.ndarray:
    """Transposed convolution of ``x`` (B,N,H,W) with ``filters`` (N,C,kh,kw).

    Equals the input-gradient map of :func:`conv2d_forward` with the same
    filters, producing (B,C,H',W') with ``H' = H*stride`` under same padding
    and ``(H-1)*stride + kh`` under valid padding.
    """
    _check_conv(x, filters, 1, 0, "conv2d_transpose_forward")
    b, _, h, w = x.shape
    ho = transpose_output_extent(h, filters.shape[2], geom.stride_h, geom.padding)
    wo = transpose_output_extent(w, filters.shape[3], geom.stride_w, geom.padding)
    out = conv2d_backward_input(x, filters, (b, filters.shape[1], ho, wo), geom)
    if bias is not None:
        if bias.shape != (filters.shape[1],):
            raise DimensionError(f"bias shape {bias.shape} does not match transposed filters {filters.shape}")
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_transpose_backward(upstream: np.ndarray, x: np.ndarray, filters: np.ndarray, geom: ConvGeometry):
    _check_conv(x, filters, 1, 0, "conv2d_transpose_backward")
    if upstream.ndim != 4 or upstream.shape[1] != filters.shape[1]:
        raise DimensionError(f"upstream {upstream.shape} inconsistent with filters {filters.shape}")
    grad_input = conv2d_forward(upstream, filters, None, geom)
    if grad_input.shape != x.shape:
        raise DimensionError(f"upstream {upstream.shape} inconsistent with input {x.shape}")
    grad_filters = conv2d_backward_filters(x, upstream, filters.shape, geom)
    return grad_input, grad_filters, upstream.sum(axis=(0, 2, 3))


def maxpool2d(x: np.ndarray):
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped.

    Returns the pooled tensor and the flat in-window argmax (0..3, row-major),
    which is the first maximal index when there are ties.
    """
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise DimensionError(f"maxpool2d needs spatial extents >= 2, got {x.shape}")
    blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, ho, wo, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward(upstream: np.ndarray, idx: np.ndarray, input_shape) -> np.ndarray:
    b, c, h, w = input_shape
    ho, wo = idx.shape[2:]
    blocks = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(blocks, idx[..., None], upstream[..., None], axis=-1)
    blocks = blocks.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
    grad = np.zeros(input_shape)
    grad[:, :, : 2 * ho, : 2 * wo] = blocks
    return grad


def upsample2d_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample2d_nearest_backward(upstream: np.ndarray, factor: int = 2) -> np.ndarray:
    b, c, h, w = upstream.shape
    return upstream.reshape(b, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def global_avgpool2d(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3))


def global_avgpool2d_backward(upstream: np.ndarray, input_shape) -> np.ndarray:
    h, w = input_shape[2:]
    return np.broadcast_to(upstream[:, :, None, None] / (h * w), input_shape).copy()


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Affine map ``x @ weights + bias`` with ``weights`` of shape (in, out)."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense_forward: input {x.shape} incompatible with weights {weights.shape}")
    out = x @ weights
    if bias is not None:
        out = out + bias
    return out


def dense_backward(upstream: np.ndarray, x: np.ndarray, weights: np.ndarray):
    if upstream.shape != (x.shape[0], weights.shape[1]):
        raise DimensionError(f"dense_backward: upstream {upstream.shape} vs input {x.shape}, weights {weights.shape}")
    return upstream @ weights.T, x.T @ upstream, upstream.sum(axis=0)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def create(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise DimensionError(f"batch norm expects 2-D or 4-D input, got {x.shape}")


def batchnorm_forward(x, gamma, beta, mode: str, state: BatchNormState):
    """Per-channel batch normalization.

    In ``"train"`` mode the batch statistics are used and ``state`` is updated
    in place; in ``"eval"`` mode the running statistics are used. Returns the
    output and a cache for :func:`batchnorm_backward`.
    """
    axes, bshape = _bn_axes(x)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mean
        state.running_var = m * state.running_var + (1 - m) * var
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, mode)


def batchnorm_backward(upstream, cache):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, mode = cache
    axes, bshape = _bn_axes(upstream)
    grad_gamma = (upstream * xhat).sum(axis=axes)
    grad_beta = upstream.sum(axis=axes)
    g = upstream * gamma.reshape(bshape)
    if mode == "eval":
        return g * inv_std.reshape(bshape), grad_gamma, grad_beta
    count = upstream.size // upstream.shape[1]
    grad_input = (
        inv_std.reshape(bshape)
        / count
        * (count * g - g.sum(axis=axes).reshape(bshape) - xhat * (g * xhat).sum(axis=axes).reshape(bshape))
    )
    return grad_input, grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(upstream, x):
    return upstream * (x > 0)


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(upstream, out):
    return upstream * out * (1.0 - out)


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(upstream, out):
    return out * (upstream - (upstream * out).sum(axis=-1, keepdims=True))


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None):
    """Inverted dropout; returns ``(output, mask)`` where ``mask`` already carries the 1/keep scale."""
    if mode == "eval" or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def categorical_cross_entropy(probs: np.ndarray, labels: np.ndarray):
    """Mean over the batch of ``-log p[label]``, on softmax outputs.

    ``labels`` are integer class ids. Returns ``(loss, grad_wrt_probs)``.
    """
    b = probs.shape[0]
    rows = np.arange(b)
    p = np.clip(probs[rows, labels], PROB_CLIP, 1.0)
    loss = -np.log(p).mean()
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / (p * b)
    return float(loss), grad


def binary_cross_entropy(out: np.ndarray, target: np.ndarray):
    """Mean elementwise binary cross-entropy on sigmoid outputs."""
    if out.shape != target.shape:
        raise DimensionError(f"binary_cross_entropy: output {out.shape} vs target {target.shape}")
    p = np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    grad = (p - target) / (p * (1.0 - p) * out.size)
    return float(loss), grad


def mse_metric(out: np.ndarray, target: np.ndarray) -> float:
    if out.shape != target.shape:
        raise DimensionError(f"mse_metric: output {out.shape} vs target {target.shape}")
    return float(np.mean((out - target) ** 2))
