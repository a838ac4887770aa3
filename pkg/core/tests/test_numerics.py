import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from django.test import SimpleTestCase

from core.exceptions import AsymmetricMatrixError, EmptySampleError, NonFiniteError, ShapeError
from core.numerics import (
    covariance,
    finite_diff_gradient,
    jacobi_eigh,
    make_rng,
    matmul,
    pca_reconstruction_error,
    reconstruction_error,
    top_eigenpairs,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class MatmulTests(SimpleTestCase):
    def test_identity(self):
        m = make_rng(0).standard_normal((3, 4)).astype(np.float32)
        assert_array_equal(matmul(np.eye(3, dtype=np.float32), m), m)

    def test_hand_case(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        assert_array_equal(out, [[3.0], [7.0]])

    def test_matches_triple_loop(self):
        rng = make_rng(1)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        assert_allclose(matmul(a, b), naive_matmul(a, b), atol=1e-6)

    def test_associative(self):
        rng = make_rng(2)
        a, b, c = (rng.standard_normal((5, 5)).astype(np.float32) for _ in range(3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        self.assertLessEqual(float(np.max(np.abs(left - right))), 1e-4)

    def test_float32_operands_stay_float32(self):
        a = np.ones((2, 2), dtype=np.float32)
        self.assertEqual(matmul(a, a).dtype, np.float32)
        self.assertEqual(matmul(a, a.astype(np.float64)).dtype, np.float64)

    def test_shape_mismatch_names_shapes(self):
        with self.assertRaisesMessage(ShapeError, "(2x3) @ (2x3)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class CovarianceTests(SimpleTestCase):
    def test_single_sample(self):
        expected = np.zeros((3, 3))
        expected[0, 0] = 1.0
        assert_array_equal(covariance([[1.0, 0.0, 0.0]]), expected)

    def test_two_basis_vectors(self):
        assert_allclose(covariance([[1.0, 0.0], [0.0, 1.0]]), np.diag([0.5, 0.5]))

    def test_matches_two_pass_oracle(self):
        x = make_rng(3).standard_normal((100, 5))
        oracle = sum(np.outer(row, row) for row in x) / len(x)
        c = covariance(x)
        assert_allclose(c, oracle, atol=1e-5)
        assert_allclose(c, c.T, atol=1e-6)

    def test_empty(self):
        with self.assertRaises(EmptySampleError):
            covariance(np.zeros((0, 3)))


class EigenTests(SimpleTestCase):
    def assert_eigenpair(self, c, pair):
        self.assertAlmostEqual(float(np.linalg.norm(pair.vector)), 1.0, delta=1e-6)
        residual = np.linalg.norm(c @ pair.vector - pair.value * pair.vector)
        self.assertLessEqual(residual, 1e-4 * abs(pair.value) + 1e-8)

    def test_diagonal(self):
        c = np.diag([3.0, 2.0, 1.0])
        pairs = top_eigenpairs(c, 2)
        self.assertEqual([p.value for p in pairs], [3.0, 2.0])
        assert_allclose(np.abs(pairs[0].vector), [1.0, 0.0, 0.0], atol=1e-12)
        assert_allclose(np.abs(pairs[1].vector), [0.0, 1.0, 0.0], atol=1e-12)

    def test_rank_one(self):
        v = np.array([1.0, 2.0, -2.0])
        (top,) = top_eigenpairs(np.outer(v, v), 1)
        self.assertAlmostEqual(top.value, 9.0, places=8)
        self.assertAlmostEqual(abs(float(top.vector @ v)) / 3.0, 1.0, places=8)

    def test_spectral_reconstruction(self):
        a = make_rng(4).standard_normal((6, 6))
        c = (a + a.T) / 2
        values, vectors = jacobi_eigh(c)
        assert_allclose(vectors @ np.diag(values) @ vectors.T, c, atol=1e-4)
        assert_allclose(vectors.T @ vectors, np.eye(6), atol=1e-5)
        self.assertTrue(np.all(np.diff(values) <= 0))

    def test_two_by_two_characteristic_roots(self):
        c = np.array([[2.0, 1.0], [1.0, 2.0]])
        pairs = top_eigenpairs(c, 2)
        assert_allclose([p.value for p in pairs], [3.0, 1.0], atol=1e-10)
        for pair in pairs:
            self.assert_eigenpair(c, pair)

    def test_covariance_pairs(self):
        x = make_rng(5).standard_normal((200, 8)) * np.arange(1, 9)
        c = covariance(x)
        for pair in top_eigenpairs(c, 4):
            self.assert_eigenpair(c, pair)

    def test_rejects_asymmetric(self):
        with self.assertRaises(AsymmetricMatrixError):
            top_eigenpairs(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)

    def test_rejects_too_many_pairs(self):
        with self.assertRaises(ShapeError):
            top_eigenpairs(np.eye(2), 3)


class ReconstructionTests(SimpleTestCase):
    def test_complete_basis_is_exact(self):
        x = make_rng(6).standard_normal((50, 4))
        self.assertAlmostEqual(pca_reconstruction_error(x, 4), 0.0, places=10)

    def test_constant_samples(self):
        x = np.tile([1.0, 0.0, 0.0], (10, 1))
        self.assertAlmostEqual(pca_reconstruction_error(x, 1), 0.0, places=12)

    def test_anisotropic_matches_projection(self):
        rng = make_rng(7)
        x = rng.standard_normal((5000, 3)) * np.sqrt([4.0, 1.0, 0.25])
        error = pca_reconstruction_error(x, 1)
        direct = reconstruction_error(x, np.array([[1.0], [0.0], [0.0]]))
        self.assertAlmostEqual(error, direct, delta=0.02)
        self.assertAlmostEqual(error, 1.25, delta=0.1)

    def test_non_increasing_in_m(self):
        x = make_rng(8).standard_normal((300, 6)) * np.arange(6, 0, -1)
        errors = [pca_reconstruction_error(x, m) for m in range(7)]
        self.assertTrue(all(b <= a + 1e-9 for a, b in zip(errors, errors[1:])))

    def test_m_too_large(self):
        with self.assertRaises(ShapeError):
            pca_reconstruction_error(np.ones((3, 2)), 3)


class FiniteDifferenceTests(SimpleTestCase):
    def test_square_norm(self):
        grad = finite_diff_gradient(lambda v: float(v @ v), np.array([1.0, 0.0, 0.0]), h=1e-4)
        assert_allclose(grad, [2.0, 0.0, 0.0], atol=1e-6)

    def test_constant(self):
        assert_array_equal(finite_diff_gradient(lambda v: 3.0, np.ones(4)), np.zeros(4))

    def test_non_finite(self):
        with self.assertRaises(NonFiniteError):
            finite_diff_gradient(lambda v: np.inf, np.ones(2))

    def test_step_must_be_positive(self):
        with self.assertRaises(ValueError):
            finite_diff_gradient(lambda v: 0.0, np.ones(2), h=0.0)


class RngTests(SimpleTestCase):
    def test_same_seed_same_stream(self):
        assert_array_equal(make_rng(42).random(1_000_000), make_rng(42).random(1_000_000))

    def test_different_seeds_differ(self):
        self.assertFalse(np.array_equal(make_rng(1).random(10), make_rng(2).random(10)))
