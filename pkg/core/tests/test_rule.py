import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from django.test import SimpleTestCase

from core.exceptions import NonFiniteError, ShapeError
from core.numerics import covariance, make_rng, top_eigenpairs
from core.rule import (
    UpdateBatch,
    activation_bound_fraction,
    competitive_delta,
    oja_delta,
    stability_report,
)


def batch_for(x, w, eta=0.1):
    x = np.asarray(x, dtype=np.float64)
    return UpdateBatch(x=x, y=x @ w, eta=eta)


def competitive_loop(x, w, eta):
    delta = np.zeros_like(w)
    for sample in x:
        y = sample @ w
        for i in range(w.shape[0]):
            feedback = sum(y[k] * w[i, k] for k in range(w.shape[1]))
            for j in range(w.shape[1]):
                delta[i, j] += eta * y[j] * (sample[i] - feedback)
    return delta / len(x)


def oja_loop(x, w, eta):
    delta = np.zeros_like(w)
    for sample in x:
        y = sample @ w
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                delta[i, j] += eta * y[j] * (sample[i] - y[j] * w[i, j])
    return delta / len(x)


class CompetitiveDeltaTests(SimpleTestCase):
    def setUp(self):
        rng = make_rng(0)
        self.x = rng.standard_normal((10, 4))
        self.w = rng.standard_normal((4, 2)) * 0.5

    def test_zero_input(self):
        batch = batch_for(np.zeros((3, 4)), self.w)
        assert_array_equal(competitive_delta(batch, self.w), np.zeros((4, 2)))

    def test_matches_loop_oracle(self):
        delta = competitive_delta(batch_for(self.x, self.w), self.w)
        assert_allclose(delta, competitive_loop(self.x, self.w, 0.1), atol=1e-5)

    def test_does_not_mutate_weights(self):
        before = self.w.copy()
        competitive_delta(batch_for(self.x, self.w), self.w)
        assert_array_equal(self.w, before)

    def test_top_eigenvector_is_fixed_point(self):
        (top,) = top_eigenpairs(covariance(self.x), 1)
        w = top.vector[:, None]
        delta = competitive_delta(batch_for(self.x, w), w)
        self.assertLess(float(np.abs(delta).max()), 1e-6)

    def test_sample_weights_scale_contributions(self):
        batch = UpdateBatch(x=self.x, y=self.x @ self.w, eta=0.1, weights=np.zeros(10))
        assert_array_equal(competitive_delta(batch, self.w), np.zeros((4, 2)))

    def test_debug_checks_net_input(self):
        batch = UpdateBatch(x=self.x, y=self.x @ self.w + 1.0, eta=0.1)
        competitive_delta(batch, self.w)
        with self.assertRaises(ValueError):
            competitive_delta(batch, self.w, debug=True)

    def test_rejects_non_finite(self):
        x = self.x.copy()
        x[0, 0] = np.nan
        with self.assertRaises(NonFiniteError):
            competitive_delta(UpdateBatch(x=x, y=x @ self.w, eta=0.1), self.w)

    def test_rejects_bad_shapes(self):
        with self.assertRaises(ShapeError):
            competitive_delta(batch_for(self.x, self.w), np.zeros((3, 2)))
        with self.assertRaises(ValueError):
            UpdateBatch(x=self.x, y=self.x @ self.w, eta=0.0)


class OjaDeltaTests(SimpleTestCase):
    def test_zero_input(self):
        w = np.ones((3, 2))
        assert_array_equal(oja_delta(batch_for(np.zeros((2, 3)), w), w), np.zeros((3, 2)))

    def test_matches_loop_oracle(self):
        rng = make_rng(1)
        x, w = rng.standard_normal((8, 5)), rng.standard_normal((5, 3))
        assert_allclose(oja_delta(batch_for(x, w), w), oja_loop(x, w, 0.1), atol=1e-5)

    def test_single_neuron_equals_competitive(self):
        rng = make_rng(2)
        x, w = rng.standard_normal((8, 5)), rng.standard_normal((5, 1))
        batch = batch_for(x, w)
        assert_allclose(oja_delta(batch, w), competitive_delta(batch, w), atol=1e-6)


class StabilityReportTests(SimpleTestCase):
    def setUp(self):
        x = make_rng(3).standard_normal((4000, 4)) * np.sqrt([4.0, 2.0, 1.0, 0.5])
        self.c = covariance(x)
        pairs = top_eigenpairs(self.c, 2)
        self.v = np.stack([p.vector for p in pairs], axis=1)

    def test_eigenvectors_are_stable(self):
        report = stability_report(self.v, self.c, 2)
        self.assertLessEqual(report.residual, 1e-4)
        self.assertAlmostEqual(report.weight_norm_sq, 2.0, delta=1e-3)
        self.assertLessEqual(report.column_norm_defect, 1e-3)
        self.assertTrue(report.is_converged())

    def test_sign_flip_invariance(self):
        flipped = self.v * np.array([-1.0, 1.0])
        a = stability_report(self.v, self.c)
        b = stability_report(flipped, self.c)
        self.assertAlmostEqual(a.residual, b.residual, places=10)
        self.assertAlmostEqual(a.weight_norm_sq, b.weight_norm_sq, places=10)
        self.assertAlmostEqual(a.column_norm_defect, b.column_norm_defect, places=10)

    def test_rotation_within_span_is_stable(self):
        for theta in np.linspace(0.0, np.pi, 7):
            rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            report = stability_report(self.v @ rotation, self.c)
            self.assertLessEqual(report.residual, 1e-3)
            self.assertLessEqual(report.column_norm_defect, 1e-3)

    def test_random_weights_are_not_stable(self):
        w = make_rng(4).standard_normal((4, 2))
        self.assertFalse(stability_report(w, self.c).is_converged())

    def test_m_must_match_columns(self):
        with self.assertRaises(ShapeError):
            stability_report(self.v, self.c, 3)

    def test_activation_bound_for_orthonormal_weights(self):
        x = make_rng(5).standard_normal((500, 4))
        self.assertEqual(activation_bound_fraction(self.v, x), 1.0)
