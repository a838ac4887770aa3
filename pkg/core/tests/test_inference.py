import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from django.test import SimpleTestCase

from core.exceptions import InferenceAbortedError, LayoutMismatchError
from core.inference import (
    GenerationConfig,
    InferenceTask,
    anomaly_score,
    anomaly_scores,
    classify,
    complete,
    error_rate,
    generate,
    is_anomalous,
    predict,
)
from core.layers import Activation
from core.network import BlockLayout, NetworkModel, NormPolicy, TrainConfig, train_unsupervised
from core.numerics import make_rng
from core.tests.utils import TOY_CODEC, toy_model, toy_rows, trained_toy_model
from data.dataset import EncodedSample

FAST = GenerationConfig(steps=60, step_size=0.05)


def non_decreasing(values):
    return all(b >= a for a, b in zip(values, values[1:]))


class ClassifyTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = trained_toy_model()
        cls.rows, cls.labels = toy_rows(60, seed=9)

    def test_matches_brute_force(self):
        for row in self.rows[:5]:
            result = classify(self.model, row, TOY_CODEC)
            brute = [
                float(self.model.output_activation(self.model.compose(row, TOY_CODEC.encode(c))))
                for c in range(TOY_CODEC.classes)
            ]
            assert_allclose(result.activations, brute, rtol=1e-5)
            self.assertEqual(result.label, int(np.argmax(brute)))
            self.assertTrue(np.all(result.activations >= 0))
            self.assertEqual(len(result.activations), TOY_CODEC.classes)

    def test_trained_model_separates_classes(self):
        self.assertLessEqual(error_rate(self.model, self.rows, self.labels, TOY_CODEC), 0.05)

    def test_predict_agrees_with_classify(self):
        labels, activations = predict(self.model, self.rows, TOY_CODEC, batch_size=7)
        self.assertEqual(activations.shape, (60, 2))
        for index in (0, 13, 59):
            self.assertEqual(labels[index], classify(self.model, self.rows[index], TOY_CODEC).label)

    def test_single_class_model_picks_that_class(self):
        rows, _ = toy_rows(100, seed=3)
        model = toy_model(seed=3)
        inputs = model.compose(rows, TOY_CODEC.encode(np.ones(100, dtype=int)))
        train_unsupervised(model, inputs, TrainConfig(eta=0.1, epochs=20, batch_size=20))
        self.assertTrue(all(classify(model, row, TOY_CODEC).label == 1 for row in rows[:10]))

    def test_ties_go_to_smallest_class(self):
        model = toy_model()
        model.layers[0].w[16:] = 0.0
        result = classify(model, self.rows[1], TOY_CODEC)
        self.assertEqual(result.activations[0], result.activations[1])
        self.assertEqual(result.label, 0)

    def test_untrained_model_is_flagged(self):
        model = toy_model()
        model.layers[0].w[...] = 0.0
        result = classify(model, self.rows[0], TOY_CODEC)
        self.assertTrue(result.degenerate)
        self.assertEqual(result.label, 0)


class GenerateTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = trained_toy_model(widths=(8, 6), activation=Activation.STD_ABS)

    def test_unit_norm_and_monotone(self):
        result = generate(self.model, 1, FAST, TOY_CODEC)
        self.assertAlmostEqual(float(np.linalg.norm(result.data)), 1.0, delta=1e-3)
        self.assertTrue(non_decreasing(result.objectives))
        self.assertEqual(len(result.objectives), result.steps + 1)
        self.assertEqual(result.class_id, 1)

    def test_same_seed_same_image(self):
        a = generate(self.model, 0, GenerationConfig(steps=30, seed=4), TOY_CODEC)
        b = generate(self.model, 0, GenerationConfig(steps=30, seed=4), TOY_CODEC)
        assert_array_equal(a.data, b.data)
        c = generate(self.model, 0, GenerationConfig(steps=30, seed=5), TOY_CODEC)
        self.assertFalse(np.array_equal(a.data, c.data))

    def test_zero_noise_is_plain_objective(self):
        cfg = GenerationConfig(noise_std=0.0, l1_beta=0.0, steps=5, seed=2)
        result = generate(self.model, 0, cfg, TOY_CODEC)
        z0 = make_rng(2).uniform(0.0, 1.0, 16)
        z0 /= np.linalg.norm(z0)
        x = np.concatenate([z0, TOY_CODEC.encode(0).astype(np.float64)])
        expected = float(self.model.output_activation(x)) - (float(z0 @ z0) - 1.0) ** 2
        self.assertAlmostEqual(result.objectives[0], expected, delta=1e-5)

    def test_zero_steps_returns_start(self):
        result = generate(self.model, 0, GenerationConfig(steps=0, seed=1), TOY_CODEC)
        z0 = make_rng(1).uniform(0.0, 1.0, 16)
        assert_allclose(result.data, z0 / np.linalg.norm(z0), rtol=1e-6)
        self.assertEqual(result.steps, 0)

    def test_unlabelled_model(self):
        model = NetworkModel.fully_connected(BlockLayout.of((4, 4, 1)), (5,), Activation.ABS, make_rng(0), 0.3)
        result = generate(model, None, FAST)
        self.assertAlmostEqual(float(np.linalg.norm(result.data)), 1.0, delta=1e-3)
        with self.assertRaises(LayoutMismatchError):
            generate(model, 0, FAST, TOY_CODEC)

    def test_labelled_model_needs_class(self):
        with self.assertRaises(LayoutMismatchError):
            generate(self.model, None, FAST, TOY_CODEC)

    def test_joint_policy(self):
        model = trained_toy_model()
        model.norm_policy = NormPolicy.JOINT
        result = generate(model, 1, FAST, TOY_CODEC)
        self.assertTrue(non_decreasing(result.objectives))

    def test_non_finite_model_aborts(self):
        model = toy_model()
        model.layers[0].w[0, 0] = np.nan
        with self.assertRaises(InferenceAbortedError) as ctx:
            generate(model, 0, FAST, TOY_CODEC)
        self.assertEqual(ctx.exception.step, 0)

    def test_config_rejects_negative_values(self):
        with self.assertRaises(ValueError):
            GenerationConfig(noise_std=-0.1)


class CompleteTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = trained_toy_model()
        cls.rows, cls.labels = toy_rows(10, seed=6)

    def test_fully_visible_is_unchanged(self):
        task = InferenceTask.masked(self.rows[0], np.ones(16, dtype=bool))
        result = complete(self.model, task, TOY_CODEC, FAST)
        assert_array_equal(result.data, self.rows[0])
        self.assertEqual(result.label, classify(self.model, self.rows[0], TOY_CODEC).label)
        self.assertFalse(result.degenerate)

    def test_nothing_visible_generates(self):
        result = complete(self.model, InferenceTask.generation(16), TOY_CODEC, FAST)
        self.assertTrue(result.degenerate)
        self.assertAlmostEqual(float(np.linalg.norm(result.data)), 1.0, delta=1e-3)

    def test_top_half_visible(self):
        visible = np.zeros((4, 4), dtype=bool)
        visible[:2] = True
        visible = visible.ravel()
        task = InferenceTask.masked(self.rows[0], visible)
        result = complete(self.model, task, TOY_CODEC, FAST)
        masked = np.where(visible, self.rows[0], 0.0)
        self.assertEqual(result.label, classify(self.model, masked, TOY_CODEC).label)
        self.assertTrue(non_decreasing(result.objectives))
        self.assertAlmostEqual(float(np.linalg.norm(result.data)), 1.0, delta=1e-5)
        # Visible entries only change by the common renormalization.
        ratios = result.data[visible] / self.rows[0][visible]
        assert_allclose(ratios, ratios[0], rtol=1e-5)

    def test_blank_visible_region_is_completed(self):
        visible = np.zeros((4, 4), dtype=bool)
        visible[:2] = True
        visible = visible.ravel()
        image = np.where(visible, 0.0, self.rows[1]).astype(np.float32)
        result = complete(self.model, InferenceTask.masked(image, visible), TOY_CODEC, FAST)
        self.assertTrue(result.degenerate)
        self.assertTrue(np.all(np.isfinite(result.data)))
        self.assertAlmostEqual(float(np.linalg.norm(result.data)), 1.0, delta=1e-5)
        assert_array_equal(result.data[visible], 0.0)
        self.assertTrue(non_decreasing(result.objectives))

    def test_size_mismatch(self):
        with self.assertRaises(LayoutMismatchError):
            complete(self.model, InferenceTask.masked(np.ones(9), np.ones(9)), TOY_CODEC)


class AnomalyTests(SimpleTestCase):
    def setUp(self):
        self.model = NetworkModel.fully_connected(BlockLayout.of((4, 4, 1)), (5,), Activation.ABS, make_rng(0), 0.3)
        self.rows, _ = toy_rows(8)

    def test_score_is_output_activation(self):
        score = anomaly_score(self.model, self.rows[0])
        self.assertAlmostEqual(score, float(self.model.output_activation(self.model.compose(self.rows[0]))), places=6)
        assert_allclose(anomaly_scores(self.model, self.rows)[0], score, rtol=1e-6)

    def test_thresholds(self):
        scores = anomaly_scores(self.model, self.rows)
        self.assertFalse(is_anomalous(scores, 0.0).any())
        self.assertTrue(is_anomalous(scores, np.inf).all())
        self.assertIsInstance(is_anomalous(float(scores[0]), 0.0), bool)

    def test_labelled_model_uses_best_class(self):
        model = trained_toy_model()
        best = classify(model, self.rows[0], TOY_CODEC).activations.max()
        self.assertAlmostEqual(anomaly_score(model, self.rows[0], TOY_CODEC), float(best), places=5)
        with self.assertRaises(ValueError):
            anomaly_score(model, self.rows[0])

    def test_encoded_samples(self):
        model = trained_toy_model()
        data = self.rows[0]
        activations = classify(model, data, TOY_CODEC).activations
        unlabelled = EncodedSample(data=data)
        self.assertAlmostEqual(anomaly_score(model, unlabelled, TOY_CODEC), float(activations.max()), places=5)
        labelled = EncodedSample(data=data, label=TOY_CODEC.encode(1), class_id=1)
        self.assertAlmostEqual(anomaly_score(model, labelled), float(activations[1]), places=5)
        with self.assertRaises(ValueError):
            anomaly_score(model, unlabelled)
