import numpy as np
import pytest

from tcsr.tensor import (as_tensor, check_finite, default_dtype, elementwise, matmul, pad_zero,
                         permute, precision, rng_generator, rng_normal, rng_truncated_normal,
                         set_default_dtype, slice_, softmax_lastdim)


def test_default_dtype_is_float32_and_switchable():
    assert default_dtype() == np.float32
    with precision(np.float64):
        assert as_tensor([1, 2]).dtype == np.float64
    assert as_tensor([1, 2]).dtype == np.float32
    with pytest.raises(ValueError):
        set_default_dtype(np.int32)


def test_check_finite():
    check_finite(np.ones(3))
    with pytest.raises(FloatingPointError):
        check_finite(np.array([1.0, np.nan]))


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(elementwise(np.add, [1, 2], [3, 4]), [4, 6])

    def test_mul_by_zeros(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(elementwise(np.multiply, x, np.zeros_like(x)), 0)

    def test_add_matches_scalar_loop(self, rng):
        x, y = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        ref = np.array([[x[i, j] + y[i, j] for j in range(5)] for i in range(4)])
        np.testing.assert_array_equal(elementwise(np.add, x, y), ref)

    def test_trailing_broadcast(self, rng):
        x = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal(4)
        np.testing.assert_array_equal(elementwise(np.add, x, b), x + b)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            elementwise(np.add, np.ones((2, 3)), np.ones(2))

    def test_unary(self):
        np.testing.assert_array_equal(elementwise(np.negative, [1.0, -2.0]), [-1.0, 2.0])


class TestMatmul:
    def test_identity(self, rng):
        a = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(matmul(a, np.eye(4)), a)

    def test_scalar_case(self):
        assert matmul([[2.0]], [[3.0]])[0, 0] == 6.0

    def test_triple_loop(self, rng):
        a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
        ref = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    ref[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-6)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_lastdim(np.zeros(3)), [1 / 3] * 3, rtol=1e-15)

    def test_single(self):
        assert softmax_lastdim(np.array([5.0]))[0] == 1.0

    def test_shift_invariance_large(self):
        s = softmax_lastdim(np.array([1000.0, 1000.5]))
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, softmax_lastdim(np.array([0.0, 0.5])), rtol=1e-12)

    def test_sums_to_one(self, rng):
        x = rng.standard_normal((6, 7)) * 30
        np.testing.assert_allclose(softmax_lastdim(x).sum(-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(softmax_lastdim(x.astype(np.float32)).sum(-1), 1.0, atol=1e-6)


class TestPadSlicePermute:
    def test_pad(self):
        np.testing.assert_array_equal(pad_zero(np.array([1.0]), 1), [0.0, 1.0, 0.0])

    def test_slice_inverts_pad(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(slice_(pad_zero(x, 1), [(1, 4), (1, 5)]), x)

    def test_slice_out_of_range(self):
        with pytest.raises(IndexError):
            slice_(np.ones(3), [(0, 4)])

    def test_bad_pad(self):
        with pytest.raises(ValueError):
            pad_zero(np.ones(3), [(-1, 0)])

    def test_permute_inverse(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        order = (2, 0, 3, 1)
        back = permute(permute(x, order), np.argsort(order))
        np.testing.assert_array_equal(back, x)

    def test_bad_permutation(self):
        with pytest.raises(ValueError):
            permute(np.ones((2, 2)), (0, 0))


class TestRng:
    def test_zero_std(self):
        np.testing.assert_array_equal(rng_normal((3, 3), mean=1.5, std=0.0, dtype=np.float64), 1.5)

    def test_deterministic(self):
        a = rng_normal(100, seed=7, dtype=np.float64)
        b = rng_normal(100, seed=7, dtype=np.float64)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, rng_normal(100, seed=8, dtype=np.float64))

    def test_streams_differ(self):
        assert not np.array_equal(rng_normal(10, seed=1, stream=0), rng_normal(10, seed=1, stream=1))

    def test_sample_mean(self):
        z = rng_normal(100_000, seed=3, dtype=np.float64)
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02

    def test_negative_std(self):
        with pytest.raises(ValueError):
            rng_normal(3, std=-1.0)

    def test_truncated_bound(self):
        z = rng_truncated_normal((1000,), 0.5, seed=0, dtype=np.float64)
        assert np.abs(z).max() <= 1.0

    def test_generator_reproducible(self):
        a = rng_generator(5, 9).integers(100, size=10)
        b = rng_generator(5, 9).integers(100, size=10)
        np.testing.assert_array_equal(a, b)
