"""Convolution layers whose filters are the inverse DCT of trained coefficients.

A :class:`SpectralConv2D` keeps a coefficient tensor of the same shape as an
ordinary filter tensor. Every forward pass rebuilds the filters slice by
slice, ``filters[n, c] = idct2(coefficients[n, c] * mask[n, c])``, and hands
them to the ordinary (or transposed) convolution. Gradients flow back through
the transform: ``grad_coefficients = dct2(grad_filters) * mask``.

For 1x1 filters the slices are single numbers, so :class:`SpectralPointwise`
instead treats each filter as a row of length C, cut into consecutive
subrows of 16 channels, and applies a 1-D inverse DCT to every subrow.

A :class:`SwitchOffMask` fixes, before training, which coefficients are
switched off: each position draws a uniform random key, positions are
sorted by key, and the first ``floor(p * count)`` are set to zero for good.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import dct as _dct
from .layers import Conv2D, Param, get_initializer

SUBROW = 16


def switched_off_count(p: float, count: int) -> int:
    """``floor(p * count)`` evaluated on the decimal value of ``p``.

    ``0.29 * 100`` is ``28.999...`` in binary floating point; the decimal
    reading gives the 29 a user expects.
    """
    return math.floor(Fraction(repr(float(p))) * count)


@dataclass
class SwitchOffMask:
    """Binary mask (1 = trainable, 0 = switched off), reproducible from ``(shape, p, seed)``."""

    shape: tuple
    p: float
    seed: int
    bits: np.ndarray = field(repr=False)

    @property
    def off_count(self) -> int:
        return int(self.bits.size - np.count_nonzero(self.bits))

    def to_json(self):
        return {"shape": list(self.shape), "p": self.p, "seed": self.seed}

    @classmethod
    def from_json(cls, d):
        return make_mask(tuple(d["shape"]), d["p"], d["seed"])


def make_mask(shape, p: float, seed: int) -> SwitchOffMask:
    """Switch off exactly ``floor(p * count)`` randomly chosen positions."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"switch-off probability must be in [0, 1], got {p}")
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape))
    keys = np.random.default_rng(seed).random(count)
    order = np.argsort(keys, kind="stable")
    bits = np.ones(count)
    bits[order[: switched_off_count(p, count)]] = 0.0
    return SwitchOffMask(shape, float(p), int(seed), bits.reshape(shape))


def _subrow_apply(rows: np.ndarray, fn, mode: str) -> np.ndarray:
    """Apply a 1-D transform to consecutive length-16 chunks of the last axis."""
    c = rows.shape[-1]
    full = (c // SUBROW) * SUBROW
    out = np.empty_like(rows)
    if full:
        lead = rows[..., :full]
        chunks = lead.reshape(lead.shape[:-1] + (full // SUBROW, SUBROW))
        out[..., :full] = fn(chunks, mode).reshape(lead.shape)
    if full < c:
        out[..., full:] = fn(rows[..., full:], mode)
    return out


class SpectralConv2D(Conv2D):
    """Convolution (or transposed convolution) parameterized by DCT coefficients.

    The ``weight`` parameter holds the coefficients; ``bias`` stays in the
    spatial domain and is never masked.
    """

    def __init__(self, name, in_channels, filters, kernel=3, stride=1, padding="same",
                 transposed=False, initializer="orthogonal", rng=None,
                 p=0.0, mask_seed=0, mode="orthonormal"):
        super().__init__(name, in_channels, filters, kernel, stride, padding, transposed, initializer)
        if mode not in _dct.MODES:
            raise ValueError(f"unknown normalization mode {mode!r}")
        self.mode = mode
        self.weight = Param(f"{name}/coefficients", np.zeros(self.coefficient_shape), "weight", self.weight.group)
        self.mask = make_mask(self.coefficient_shape, p, mask_seed)
        self.weight.mask = self.mask.bits
        self._frozen = None
        if rng is not None:
            self.reset_parameters(rng)

    @property
    def coefficient_shape(self):
        return self.filter_shape

    @property
    def coefficients(self):
        return self.weight

    def reset_parameters(self, rng):
        init_spectral(self, self.initializer, rng)

    # transform hooks; SpectralPointwise overrides these two
    def _to_filters(self, coeffs):
        return _dct.idct2(coeffs, self.mode)

    def _to_coefficient_grad(self, grad_filters):
        return _dct.idct_grad(grad_filters, self.mode)

    def _to_coefficients(self, filters):
        return _dct.dct2(filters, self.mode)

    def load_filters(self, filters):
        """Set coefficients to the forward transform of ``filters`` (then mask them).

        In orthonormal mode with ``p = 0`` the layer then reproduces ``filters`` exactly.
        """
        filters = np.asarray(filters, dtype=np.float64).reshape(self.filter_shape)
        self.weight.value[...] = self._to_coefficients(filters).reshape(self.coefficient_shape)
        self.weight.enforce_mask()
        self.unfreeze()

    def materialize_filters(self) -> np.ndarray:
        return self._to_filters(self.weight.value * self.mask.bits).reshape(self.filter_shape)

    def current_filters(self):
        if self._frozen is not None:
            return self._frozen
        return self.materialize_filters()

    def freeze(self):
        """Cache the materialized filters for inference-only use."""
        self._frozen = self.materialize_filters()

    def unfreeze(self):
        self._frozen = None

    def forward(self, x, train=False):
        self._x = x
        self._filters = self.current_filters()
        return self._apply(x, self._filters)

    def backward(self, grad):
        gx, gc, gb = spectral_backward(self, self._x, grad, self._filters)
        self.weight.grad += gc
        self.bias.grad += gb
        return gx

    def trainable_count(self) -> int:
        return self.weight.trainable_count() + self.bias.value.size


class SpectralPointwise(SpectralConv2D):
    """1x1 spectral layer; the N x C weight matrix is rebuilt per 16-channel subrow."""

    def __init__(self, name, in_channels, filters, stride=1, padding="same", transposed=False,
                 initializer="orthogonal", rng=None, p=0.0, mask_seed=0, mode="orthonormal"):
        super().__init__(name, in_channels, filters, 1, stride, padding, transposed, initializer,
                         rng, p, mask_seed, mode)

    @property
    def coefficient_shape(self):
        return self.filter_shape[:2]

    def _to_filters(self, coeffs):
        return _subrow_apply(coeffs, _dct.idct1, self.mode)

    def _to_coefficient_grad(self, grad_filters):
        return _subrow_apply(grad_filters.reshape(self.coefficient_shape), _dct.idct1_grad, self.mode)

    def _to_coefficients(self, filters):
        return _subrow_apply(filters.reshape(self.coefficient_shape), _dct.dct1, self.mode)


def materialize_filters(layer: SpectralConv2D) -> np.ndarray:
    return layer.materialize_filters()


def spectral_forward(layer: SpectralConv2D, x: np.ndarray) -> np.ndarray:
    return layer._apply(x, layer.materialize_filters())


def spectral_backward(layer: SpectralConv2D, x: np.ndarray, upstream: np.ndarray, filters=None):
    """Return ``(grad_input, grad_coefficients, grad_bias)``; masked entries get exactly 0."""
    if filters is None:
        filters = layer.materialize_filters()
    gx, gf, gb = layer._grads(upstream, x, filters)
    gc = layer._to_coefficient_grad(gf).reshape(layer.coefficient_shape) * layer.mask.bits
    return gx, gc, gb


def pointwise_forward(layer: SpectralPointwise, x):
    return spectral_forward(layer, x)


def pointwise_backward(layer: SpectralPointwise, x, upstream):
    return spectral_backward(layer, x, upstream)


def init_spectral(layer: SpectralConv2D, initializer="orthogonal", rng=None):
    """Initialize the coefficients as ordinary filters would be, then zero masked entries."""
    if rng is None:
        raise ValueError("init_spectral needs a random generator")
    init = get_initializer(initializer) if isinstance(initializer, str) else initializer
    layer.weight.value[...] = init(layer.coefficient_shape, rng)
    layer.weight.enforce_mask()
    layer.bias.value[...] = 0.0
    layer.unfreeze()


def coefficients_from_filters(filters: np.ndarray, mode="orthonormal") -> np.ndarray:
    """Coefficients that reproduce ``filters`` exactly in orthonormal mode."""
    return _dct.dct2(filters, mode)

