"""DCT-II and its inverse in 1-D and 2-D, evaluated directly.

Two normalizations are offered:

``"verbatim"``
    Plain cosine sums without scale factors,
    ``X[k] = sum_i x[i] cos(pi/n (i + 1/2) k)`` and
    ``x[i] = sum_k X[k] cos(pi/n (i + 1/2) k)``. The two are not inverse to
    each other.

``"orthonormal"``
    Row ``k`` of the cosine matrix is scaled by ``sqrt(1/n)`` for ``k = 0``
    and ``sqrt(2/n)`` otherwise, so the matrix is orthogonal and the inverse
    transform is its transpose.

Transforms act on the trailing axes, so a whole ``(N, C, H, W)`` tensor of
filter slices is handled by :func:`idct2` in one call. Sizes here are tiny
(3x3 slices, length-16 channel groups), hence the O(n^2) matrix form.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor_core import DimensionError

__all__ = ["MODES", "dct_matrix", "dct1", "idct1", "dct2", "idct2", "idct_grad", "idct1_grad"]

MODES = ("orthonormal", "verbatim")


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown normalization mode {mode!r}; expected one of {MODES}")


@lru_cache(maxsize=None)
def _cached_matrix(n: int, mode: str) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi / n * (i + 0.5) * k)
    if mode == "orthonormal":
        scale = np.full(n, np.sqrt(2.0 / n))
        scale[0] = np.sqrt(1.0 / n)
        m = scale[:, None] * m
    m.setflags(write=False)
    return m


def dct_matrix(n: int, mode: str = "orthonormal") -> np.ndarray:
    """Return the n x n forward DCT-II matrix (rows indexed by frequency)."""
    _check_mode(mode)
    if n < 1:
        raise DimensionError(f"transform length must be >= 1, got {n}")
    return _cached_matrix(int(n), mode)


def _as_array(x, ndim: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < ndim or 0 in x.shape[-ndim:]:
        raise DimensionError(f"{name}: need at least {ndim} non-empty trailing axes, got shape {x.shape}")
    return x


def dct1(x, mode: str = "orthonormal") -> np.ndarray:
    """DCT-II along the last axis."""
    x = _as_array(x, 1, "dct1")
    return x @ dct_matrix(x.shape[-1], mode).T


def idct1(X, mode: str = "orthonormal") -> np.ndarray:
    """Inverse DCT-II along the last axis."""
    X = _as_array(X, 1, "idct1")
    return X @ dct_matrix(X.shape[-1], mode)


def idct1_grad(upstream, mode: str = "orthonormal") -> np.ndarray:
    """Gradient of a loss w.r.t. the input of :func:`idct1`, given the gradient w.r.t. its output."""
    return dct1(upstream, mode)


def dct2(x, mode: str = "orthonormal") -> np.ndarray:
    """2-D DCT-II over the last two axes: ``T_m @ x @ T_n.T``."""
    x = _as_array(x, 2, "dct2")
    tm = dct_matrix(x.shape[-2], mode)
    tn = dct_matrix(x.shape[-1], mode)
    return tm @ x @ tn.T


def idct2(X, mode: str = "orthonormal") -> np.ndarray:
    """2-D inverse DCT-II over the last two axes: ``T_m.T @ X @ T_n``."""
    X = _as_array(X, 2, "idct2")
    tm = dct_matrix(X.shape[-2], mode)
    tn = dct_matrix(X.shape[-1], mode)
    return tm.T @ X @ tn


def idct_grad(upstream, mode: str = "orthonormal", shape=None) -> np.ndarray:
    """Backpropagate through :func:`idct2`.

    ``upstream`` holds dJ/dx for the reconstructed slices; the result is
    dJ/dX for the coefficients. Because the reconstruction is linear with
    matrix ``T^T``, the gradient is ``T @ upstream``, i.e. the forward DCT of
    the upstream gradient in the same normalization.
    """
    upstream = _as_array(upstream, 2, "idct_grad")
    if shape is not None and tuple(upstream.shape[-2:]) != tuple(shape[-2:]):
        raise DimensionError(f"idct_grad: upstream {upstream.shape} does not match coefficients {tuple(shape)}")
    return dct2(upstream, mode)
