"""Layer objects wrapping the kernels in :mod:`dctconv.tensor_core`.

A layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``Param.grad`` during ``backward``. Shapes passed to
``output_shape`` exclude the batch axis.
"""

from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .tensor_core import ConvGeometry, DimensionError


class Param:
    """A trained tensor plus its gradient.

    ``kind`` is ``"weight"``, ``"bias"`` or ``"norm"`` and decides whether
    weight decay applies. ``group`` is the auditing bucket (``"3x3"``,
    ``"1x1"``, ``"dense"``, ``"norm"``...). ``mask`` marks trainable entries
    with 1 and switched-off entries with 0; ``None`` means fully trainable.
    """

    def __init__(self, name, value, kind="weight", group="other", mask=None):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.kind = kind
        self.group = group
        self.mask = mask

    @property
    def shape(self):
        return self.value.shape

    def trainable_count(self) -> int:
        if self.mask is None:
            return int(self.value.size)
        return int(np.count_nonzero(self.mask))

    def enforce_mask(self):
        if self.mask is not None:
            self.value *= self.mask

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape}, kind={self.kind!r})"


# -- initializers ------------------------------------------------------------

def orthogonal(shape, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init on the ``shape[0] x prod(shape[1:])`` flattening.

    Rows are orthonormal when ``shape[0] <= prod(shape[1:])``, columns otherwise.
    """
    rows = shape[0]
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q.reshape(shape)


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


INITIALIZERS = {"orthogonal": orthogonal, "glorot_uniform": glorot_uniform}


def get_initializer(name):
    try:
        return INITIALIZERS[name]
    except KeyError:
        raise ValueError(f"unknown initializer {name!r}; known: {sorted(INITIALIZERS)}") from None


# -- layers ------------------------------------------------------------------

class Layer:
    name = "layer"

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def params(self):
        return []

    def buffers(self):
        """Non-trained state that must survive a checkpoint."""
        return {}

    def sublayers(self):
        return []

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _filter_group(k):
    return f"{k[0]}x{k[1]}"


class Conv2D(Layer):
    """Plain convolution or transposed convolution with bias.

    Filters are ``(out, in, k, k)`` for convolution and ``(in, out, k, k)``
    for the transposed variant, so ``filters[n, c]`` is always one slice.
    """

    def __init__(self, name, in_channels, filters, kernel=3, stride=1, padding="same",
                 transposed=False, initializer="orthogonal", rng=None):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = filters
        self.kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        self.geom = ConvGeometry.square(stride, padding)
        self.transposed = transposed
        self.initializer = initializer
        shape = (in_channels, filters) if transposed else (filters, in_channels)
        self.filter_shape = shape + self.kernel
        self.weight = Param(f"{name}/filters", np.zeros(self.filter_shape), "weight", _filter_group(self.kernel))
        self.bias = Param(f"{name}/bias", np.zeros(filters), "bias", _filter_group(self.kernel))
        if rng is not None:
            self.reset_parameters(rng)
        self._x = None

    @property
    def op_kind(self):
        return "transposed_convolution" if self.transposed else "convolution"

    def reset_parameters(self, rng):
        self.weight.value[...] = get_initializer(self.initializer)(self.filter_shape, rng)
        self.bias.value[...] = 0.0

    def current_filters(self):
        return self.weight.value

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise DimensionError(f"{self.name}: expects {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel
        if self.transposed:
            return (self.out_channels,
                    tc.transpose_output_extent(h, kh, self.geom.stride_h, self.geom.padding),
                    tc.transpose_output_extent(w, kw, self.geom.stride_w, self.geom.padding))
        return (self.out_channels,
                tc.conv_output_extent(h, kh, self.geom.stride_h, self.geom.padding)[0],
                tc.conv_output_extent(w, kw, self.geom.stride_w, self.geom.padding)[0])

    def _apply(self, x, filters):
        if self.transposed:
            return tc.conv2d_transpose_forward(x, filters, self.bias.value, self.geom)
        return tc.conv2d_forward(x, filters, self.bias.value, self.geom)

    def _grads(self, grad, x, filters):
        if self.transposed:
            return tc.conv2d_transpose_backward(grad, x, filters, self.geom)
        return tc.conv2d_backward(grad, x, filters, self.geom)

    def forward(self, x, train=False):
        self._x = x
        return self._apply(x, self.current_filters())

    def backward(self, grad):
        gx, gw, gb = self._grads(grad, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def params(self):
        return [self.weight, self.bias]


class Dense(Layer):
    def __init__(self, name, in_features, units, initializer="glorot_uniform", rng=None):
        self.name = name
        self.in_features = in_features
        self.units = units
        self.initializer = initializer
        self.weight = Param(f"{name}/weights", np.zeros((in_features, units)), "weight", "dense")
        self.bias = Param(f"{name}/bias", np.zeros(units), "bias", "dense")
        if rng is not None:
            self.reset_parameters(rng)
        self._x = None

    def reset_parameters(self, rng):
        self.weight.value[...] = get_initializer(self.initializer)(self.weight.shape, rng)
        self.bias.value[...] = 0.0

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise DimensionError(f"{self.name}: expects input ({self.in_features},), got {shape}")
        return (self.units,)

    def forward(self, x, train=False):
        self._x = x
        return tc.dense_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        gx, gw, gb = tc.dense_backward(grad, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def params(self):
        return [self.weight, self.bias]


class BatchNorm(Layer):
    def __init__(self, name, channels):
        self.name = name
        self.channels = channels
        self.gamma = Param(f"{name}/gamma", np.ones(channels), "norm", "norm")
        self.beta = Param(f"{name}/beta", np.zeros(channels), "norm", "norm")
        self.state = tc.BatchNormState.create(channels)
        self._cache = None

    def reset_parameters(self, rng=None):
        self.gamma.value[...] = 1.0
        self.beta.value[...] = 0.0
        self.state = tc.BatchNormState.create(self.channels)

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise DimensionError(f"{self.name}: expects {self.channels} channels, got {shape}")
        return shape

    def forward(self, x, train=False):
        out, self._cache = tc.batchnorm_forward(
            x, self.gamma.value, self.beta.value, "train" if train else "eval", self.state
        )
        return out

    def backward(self, grad):
        gx, gg, gb = tc.batchnorm_backward(grad, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}/running_mean": self.state.running_mean,
                f"{self.name}/running_var": self.state.running_var}

    def load_buffers(self, values):
        self.state.running_mean = np.array(values[f"{self.name}/running_mean"], dtype=np.float64)
        self.state.running_var = np.array(values[f"{self.name}/running_var"], dtype=np.float64)


class Activation(Layer):
    def __init__(self, name, fn):
        if fn not in ("relu", "sigmoid", "softmax"):
            raise ValueError(f"unknown activation {fn!r}")
        self.name = name
        self.fn = fn
        self._keep = None

    def forward(self, x, train=False):
        if self.fn == "relu":
            self._keep = x
            return tc.relu(x)
        out = tc.sigmoid(x) if self.fn == "sigmoid" else tc.softmax(x)
        self._keep = out
        return out

    def backward(self, grad):
        if self.fn == "relu":
            return tc.relu_backward(grad, self._keep)
        if self.fn == "sigmoid":
            return tc.sigmoid_backward(grad, self._keep)
        return tc.softmax_backward(grad, self._keep)


class Dropout(Layer):
    def __init__(self, name, rate):
        self.name = name
        self.rate = rate
        self.rng = None
        self._mask = None

    def forward(self, x, train=False):
        out, self._mask = tc.dropout(x, self.rate, "train" if train else "eval", self.rng)
        return out

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class MaxPool2D(Layer):
    def __init__(self, name):
        self.name = name
        self._cache = None

    def output_shape(self, shape):
        c, h, w = shape
        if h < 2 or w < 2:
            raise DimensionError(f"{self.name}: cannot pool spatial extent {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x, train=False):
        out, idx = tc.maxpool2d(x)
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        idx, shape = self._cache
        return tc.maxpool2d_backward(grad, idx, shape)


class UpSample2D(Layer):
    def __init__(self, name, factor=2):
        self.name = name
        self.factor = factor

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h * self.factor, w * self.factor)

    def forward(self, x, train=False):
        return tc.upsample2d_nearest(x, self.factor)

    def backward(self, grad):
        return tc.upsample2d_nearest_backward(grad, self.factor)


class GlobalAvgPool2D(Layer):
    def __init__(self, name):
        self.name = name
        self._shape = None

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, train=False):
        self._shape = x.shape
        return tc.global_avgpool2d(x)

    def backward(self, grad):
        return tc.global_avgpool2d_backward(grad, self._shape)


class Reshape(Layer):
    """Reshape the non-batch axes; ``target=None`` flattens."""

    def __init__(self, name, target=None):
        self.name = name
        self.target = None if target is None else tuple(target)
        self._shape = None

    def output_shape(self, shape):
        size = int(np.prod(shape))
        if self.target is None:
            return (size,)
        if int(np.prod(self.target)) != size:
            raise DimensionError(f"{self.name}: cannot reshape {shape} to {self.target}")
        return self.target

    def forward(self, x, train=False):
        self._shape = x.shape
        tgt = (-1,) if self.target is None else self.target
        return x.reshape((x.shape[0],) + tgt)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, name, layers):
        self.name = name
        self.layers = list(layers)

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def sublayers(self):
        return list(self.layers)


class ResidualBlock(Layer):
    """Bottleneck residual block: ``relu(main(x) + shortcut(x))``.

    An empty ``shortcut`` is the identity.
    """

    def __init__(self, name, main, shortcut=()):
        self.name = name
        self.main = Sequential(f"{name}/main", main)
        self.shortcut = Sequential(f"{name}/shortcut", shortcut)
        self._sum = None

    def output_shape(self, shape):
        a = self.main.output_shape(shape)
        b = self.shortcut.output_shape(shape)
        if a != b:
            raise DimensionError(f"{self.name}: main path gives {a} but shortcut gives {b}")
        return a

    def forward(self, x, train=False):
        s = self.main.forward(x, train) + self.shortcut.forward(x, train)
        self._sum = s
        return tc.relu(s)

    def backward(self, grad):
        g = tc.relu_backward(grad, self._sum)
        return self.main.backward(g) + self.shortcut.backward(g)

    def params(self):
        return self.main.params() + self.shortcut.params()

    def sublayers(self):
        return self.main.layers + self.shortcut.layers


def walk(layer):
    """Yield ``layer`` and every nested layer, depth first."""
    yield layer
    for sub in layer.sublayers():
        yield from walk(sub)
