import zlib

import numpy as np
import pytest

from dctconv import dct
from dctconv.dct_conv import (
    SUBROW, SpectralConv2D, SpectralPointwise, SwitchOffMask, coefficients_from_filters,
    make_mask, spectral_backward, switched_off_count,
)
from dctconv.layers import Conv2D

from helpers import numeric_grad, rel_error

TABLE_P = [0, 0.3, 0.5, 0.7, 0.9, 0.97, 0.999, 1]


@pytest.mark.parametrize("p", TABLE_P)
@pytest.mark.parametrize("shape", [(64, 3, 3, 3), (8, 5, 3, 3), (1, 1), (256, 1024)])
def test_off_count_is_floor(p, shape):
    count = int(np.prod(shape))
    m = make_mask(shape, p, seed=4)
    assert m.bits.shape == tuple(shape)
    assert set(np.unique(m.bits)) <= {0.0, 1.0}
    assert m.off_count == int(np.floor(p * count + 1e-9))


def test_off_count_hand_values():
    assert switched_off_count(0.5, 9) == 4
    assert switched_off_count(0.9, 1728) == 1555
    assert switched_off_count(0.29, 100) == 29
    assert switched_off_count(1, 7) == 7
    assert make_mask((10,), 0.3, 0).off_count == 3


@pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
def test_invalid_p(p):
    with pytest.raises(ValueError):
        make_mask((3, 3), p, 0)


def test_mask_deterministic_and_seed_sensitive():
    a, b = make_mask((16, 16, 3, 3), 0.5, 11), make_mask((16, 16, 3, 3), 0.5, 11)
    assert np.array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, make_mask((16, 16, 3, 3), 0.5, 12).bits)


def test_mask_nested_across_p():
    # the same key order is used, so raising p only switches off more positions
    lo, hi = make_mask((32, 32), 0.3, 5), make_mask((32, 32), 0.7, 5)
    assert np.all(hi.bits <= lo.bits)


def test_mask_json_round_trip():
    m = make_mask((4, 3, 3, 3), 0.7, 99)
    back = SwitchOffMask.from_json(m.to_json())
    assert back.shape == m.shape and back.p == m.p and back.seed == m.seed
    assert np.array_equal(back.bits, m.bits)


def _layer(cls=SpectralConv2D, c=3, n=4, k=3, p=0.0, mode="orthonormal", transposed=False, stride=1, seed=0):
    kw = {} if cls is SpectralPointwise else {"kernel": k}
    return cls("t", c, n, stride=stride, transposed=transposed, rng=np.random.default_rng(seed),
               p=p, mask_seed=seed + 1, mode=mode, **kw)


@pytest.mark.parametrize("mode", ["orthonormal", "verbatim"])
def test_materialize_matches_slicewise_oracle(mode):
    layer = _layer(p=0.5, mode=mode)
    coeffs = layer.weight.value
    mask = layer.mask.bits
    filters = layer.materialize_filters()
    for n in range(4):
        for c in range(3):
            np.testing.assert_allclose(filters[n, c], dct.idct2(coeffs[n, c] * mask[n, c], mode), atol=1e-14)


def test_pointwise_materialize_subrows():
    layer = _layer(SpectralPointwise, c=40, n=3, p=0.3)
    w = layer.weight.value * layer.mask.bits
    f = layer.materialize_filters()
    assert f.shape == (3, 40, 1, 1)
    for start, stop in [(0, 16), (16, 32), (32, 40)]:
        np.testing.assert_allclose(f[:, start:stop, 0, 0], dct.idct1(w[:, start:stop]), atol=1e-14)


def test_pointwise_coefficient_shape_and_count():
    layer = _layer(SpectralPointwise, c=64, n=256, p=0.5)
    assert layer.weight.shape == (256, 64)
    assert layer.trainable_count() == 256 * 64 - switched_off_count(0.5, 256 * 64) + 256


def test_masked_coefficients_stay_zero_after_init():
    layer = _layer(p=0.9)
    assert np.all(layer.weight.value[layer.mask.bits == 0] == 0.0)


@pytest.mark.parametrize("transposed", [False, True])
@pytest.mark.parametrize("stride", [1, 2])
def test_p0_matches_plain_conv(transposed, stride):
    rng = np.random.default_rng(3)
    plain = Conv2D("c", 3, 5, 3, stride=stride, transposed=transposed, rng=rng)
    spec = _layer(c=3, n=5, stride=stride, transposed=transposed)
    spec.weight.value[...] = coefficients_from_filters(plain.weight.value)
    spec.bias.value[...] = plain.bias.value = rng.standard_normal(5)
    x = rng.standard_normal((2, 3, 6, 6))
    assert np.abs(spec.forward(x) - plain.forward(x)).max() < 1e-9


def test_orthogonal_init_survives_orthonormal_transform():
    # coefficients get the orthogonal init; idct2 per slice is orthogonal, so the
    # flattened filters keep orthonormal rows
    layer = _layer(c=8, n=16)
    f = layer.materialize_filters().reshape(16, -1)
    np.testing.assert_allclose(f @ f.T, np.eye(16), atol=1e-10)


CASES = [
    (SpectralConv2D, mode, tr, stride, p)
    for mode in ("orthonormal", "verbatim")
    for tr in (False, True)
    for stride in (1, 2)
    for p in (0.0, 0.5)
] + [
    (SpectralPointwise, mode, tr, stride, p)
    for mode in ("orthonormal", "verbatim")
    for tr in (False, True)
    for stride, p in ((1, 0.0), (2, 0.5))
]


@pytest.mark.parametrize("cls,mode,transposed,stride,p", CASES)
def test_coefficient_gradient_finite_differences(cls, mode, transposed, stride, p):
    rng = np.random.default_rng(zlib.crc32(repr((cls.__name__, mode, transposed, stride, p)).encode()))
    c = 20 if cls is SpectralPointwise else 2
    layer = _layer(cls, c=c, n=3, p=p, mode=mode, transposed=transposed, stride=stride,
                   seed=int(rng.integers(1000)))
    layer.bias.value[...] = rng.standard_normal(3)
    x = rng.standard_normal((2, c, 4, 4))
    proj = rng.standard_normal(layer.forward(x).shape)

    def loss():
        return float(np.sum(layer._apply(x, layer.materialize_filters()) * proj))

    gx, gc, gb = spectral_backward(layer, x, proj)
    num_c = numeric_grad(loss, layer.weight.value) * layer.mask.bits
    assert rel_error(gc, num_c) < 1e-6
    assert rel_error(gx, numeric_grad(loss, x)) < 1e-6
    assert rel_error(gb, numeric_grad(loss, layer.bias.value)) < 1e-6
    assert np.all(gc[layer.mask.bits == 0] == 0.0)


def test_backward_accumulates_into_params():
    layer = _layer(p=0.5)
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 5))
    y = layer.forward(x, train=True)
    layer.backward(np.ones_like(y))
    _, gc, gb = spectral_backward(layer, x, np.ones_like(y))
    np.testing.assert_allclose(layer.weight.grad, gc)
    np.testing.assert_allclose(layer.bias.grad, gb)


def test_freeze_caches_filters():
    layer = _layer()
    layer.freeze()
    cached = layer.current_filters()
    layer.weight.value += 1.0
    assert np.array_equal(layer.current_filters(), cached)
    layer.unfreeze()
    assert not np.array_equal(layer.current_filters(), cached)


def test_subrow_length_constant():
    assert SUBROW == 16


def test_unknown_mode_rejected():
    with pytest.raises(ValueError, match="mode"):
        SpectralConv2D("x", 2, 2, 3, mode="dct4")


@pytest.mark.parametrize("cls,c", [(SpectralConv2D, 3), (SpectralPointwise, 40)])
def test_load_filters_round_trip(cls, c):
    layer = _layer(cls, c=c, n=4)
    target = np.random.default_rng(0).standard_normal(layer.filter_shape)
    layer.load_filters(target)
    np.testing.assert_allclose(layer.materialize_filters(), target, atol=1e-12)
