import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dctconv import dct
from dctconv.tensor_core import DimensionError

from helpers import dct2_literal, numeric_grad, rel_error

MODES = ["orthonormal", "verbatim"]


def test_verbatim_dct1_of_ones_is_sum():
    X = dct.dct1(np.ones(4), "verbatim")
    assert X[0] == pytest.approx(4.0, abs=1e-14)
    np.testing.assert_allclose(X[1:], 0.0, atol=1e-14)


def test_verbatim_dct2_of_ones_is_sum():
    X = dct.dct2(np.ones((2, 2)), "verbatim")
    expected = np.zeros((2, 2))
    expected[0, 0] = 4.0
    np.testing.assert_allclose(X, expected, atol=1e-14)


@pytest.mark.parametrize("mode", MODES)
def test_zero_maps_to_zero(mode):
    assert not dct.dct1(np.zeros(5), mode).any()
    assert not dct.dct2(np.zeros((3, 4)), mode).any()
    assert not dct.idct2(np.zeros((3, 4)), mode).any()


def test_verbatim_roundtrip_identity():
    # sum_k cos(a_j k) cos(a_i k) = n/2 delta_ij + 1/2, so idct(dct(x)) = n/2 x + sum(x)/2
    rng = np.random.default_rng(0)
    x = rng.standard_normal(5)
    direct = np.array([
        sum(sum(x[i] * np.cos(np.pi / 5 * (i + 0.5) * k) for i in range(5)) * np.cos(np.pi / 5 * (j + 0.5) * k)
            for k in range(5))
        for j in range(5)
    ])
    got = dct.idct1(dct.dct1(x, "verbatim"), "verbatim")
    np.testing.assert_allclose(got, direct, atol=1e-10)
    np.testing.assert_allclose(got, 2.5 * x + 0.5 * x.sum(), atol=1e-10)


def test_orthonormal_roundtrip_3x3():
    x = np.random.default_rng(1).standard_normal((3, 3))
    assert np.abs(dct.idct2(dct.dct2(x)) - x).max() < 1e-10


def test_verbatim_dct2_matches_literal_sum():
    x = np.random.default_rng(2).standard_normal((3, 3))
    np.testing.assert_allclose(dct.dct2(x, "verbatim"), dct2_literal(x), atol=1e-12, rtol=0)


def test_verbatim_dct2_matches_literal_sum_rectangular():
    x = np.random.default_rng(3).standard_normal((2, 5))
    np.testing.assert_allclose(dct.dct2(x, "verbatim"), dct2_literal(x), atol=1e-12, rtol=0)


def test_orthonormal_matrix_scaling():
    for n in (1, 2, 3, 8, 16):
        m = dct.dct_matrix(n)
        np.testing.assert_allclose(m @ m.T, np.eye(n), atol=1e-13)
        np.testing.assert_allclose(m[0], np.full(n, np.sqrt(1 / n)), atol=1e-15)


def test_matches_scipy_orthonormal():
    scipy_fft = pytest.importorskip("scipy.fft")
    x = np.random.default_rng(4).standard_normal((4, 6))
    np.testing.assert_allclose(dct.dct2(x), scipy_fft.dctn(x, type=2, norm="ortho"), atol=1e-12)


@pytest.mark.parametrize("fn", [dct.dct1, dct.idct1])
def test_empty_input_rejected(fn):
    with pytest.raises(DimensionError):
        fn(np.zeros(0))


def test_empty_matrix_rejected():
    with pytest.raises(DimensionError):
        dct.dct2(np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        dct.idct2(np.zeros(3))


def test_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        dct.dct1(np.ones(3), "jpeg")


def test_idct_grad_zero():
    assert not dct.idct_grad(np.zeros((3, 3))).any()


def test_verbatim_idct_grad_is_forward_transform():
    u = np.random.default_rng(5).standard_normal((3, 3))
    np.testing.assert_allclose(dct.idct_grad(u, "verbatim"), dct.dct2(u, "verbatim"), atol=1e-14)
    np.testing.assert_allclose(dct.idct_grad(u, "verbatim"), dct2_literal(u), atol=1e-12)


def test_idct_grad_shape_mismatch():
    with pytest.raises(DimensionError):
        dct.idct_grad(np.zeros((3, 3)), shape=(2, 3))


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("shape", [(3, 3), (2, 4), (1, 5)])
def test_idct_grad_finite_differences(mode, shape):
    rng = np.random.default_rng(6)
    X = rng.standard_normal(shape)
    proj = rng.standard_normal(shape)

    def loss():
        return float(np.sum(dct.idct2(X, mode) * proj))

    assert rel_error(dct.idct_grad(proj, mode), numeric_grad(loss, X)) < 1e-8


@pytest.mark.parametrize("mode", MODES)
def test_separability(mode):
    x = np.random.default_rng(7).standard_normal((4, 6))
    by_axes = dct.dct1(dct.dct1(x, mode).T, mode).T
    np.testing.assert_allclose(dct.dct2(x, mode), by_axes, atol=1e-12)
    inv_axes = dct.idct1(dct.idct1(x, mode).T, mode).T
    np.testing.assert_allclose(dct.idct2(x, mode), inv_axes, atol=1e-12)


def test_batched_trailing_axes():
    x = np.random.default_rng(8).standard_normal((2, 3, 3, 3))
    out = dct.idct2(x)
    for n in range(2):
        for c in range(3):
            np.testing.assert_allclose(out[n, c], dct.idct2(x[n, c]), atol=1e-14)


shapes = st.tuples(st.integers(1, 8), st.integers(1, 8))


@settings(max_examples=60, deadline=None)
@given(shapes, st.sampled_from(MODES), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_linearity(shape, mode, a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(shape), r.standard_normal(shape)
    for fn in (dct.dct2, dct.idct2):
        lhs = fn(a * x + b * y, mode)
        rhs = a * fn(x, mode) + b * fn(y, mode)
        assert np.abs(lhs - rhs).max() < 1e-10


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_parseval_orthonormal(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    assert abs(np.linalg.norm(dct.dct2(x)) - np.linalg.norm(x)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(shapes, st.sampled_from(MODES), st.integers(0, 2**32 - 1))
def test_adjointness(shape, mode, seed):
    r = np.random.default_rng(seed)
    X, u = r.standard_normal(shape), r.standard_normal(shape)
    assert abs(np.sum(dct.idct2(X, mode) * u) - np.sum(X * dct.idct_grad(u, mode))) < 1e-10
