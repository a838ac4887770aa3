import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from django.test import TestCase

from core.checkpoint import load_checkpoint
from experiments.config import ConfigError, ExperimentSpec, load_config
from experiments.models import ExperimentRun, MetricsRecord
from experiments.presets import model_preset
from experiments.runner import CHECKPOINT_NAME, SUMMARY_NAME, ExperimentRunner, features_at, run_experiment

TOY = [
    "data.preset=toy",
    "model.preset=toy_2layer",
    "model.sigma=0.1",
    "train.eta=0.05",
    "train.epochs=3",
    "train.batch_size=20",
    "inference.steps=20",
    "inference.samples=2",
]


class RunnerTestCase(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def spec(self, name, *overrides):
        out = self.tmp / name
        return ExperimentSpec.from_config(
            load_config(overrides=[*TOY, f"experiment.name={name}", f"experiment.out={out}", *overrides])
        )

    def classification_checkpoint(self):
        run_experiment(self.spec("base"), record=False)
        return self.tmp / "base" / CHECKPOINT_NAME


class ClassificationTests(RunnerTestCase):
    def test_run_is_recorded(self):
        summary = run_experiment(self.spec("toy"))
        out = self.tmp / "toy"
        for name in ("manifest.json", "metrics.csv", SUMMARY_NAME, CHECKPOINT_NAME):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(summary["epochs"], 3)
        self.assertLessEqual(summary["test_error"], 0.5)

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.Status.FINISHED)
        self.assertEqual(run.checkpoint, str(out / CHECKPOINT_NAME))
        self.assertEqual(run.summary["test_error"], summary["test_error"])
        self.assertEqual(MetricsRecord.objects.filter(run=run).count(), 3)

        metrics = pd.read_csv(out / "metrics.csv")
        self.assertEqual(list(metrics.columns), ["epoch", "train_acc", "test_acc", "norm_activation", "seconds"])
        self.assertEqual(list(metrics["epoch"]), [0, 1, 2])

    def test_deterministic_metrics_are_identical(self):
        run_experiment(self.spec("a", "experiment.deterministic=true"), record=False)
        run_experiment(self.spec("b", "experiment.deterministic=true"), record=False)
        self.assertEqual((self.tmp / "a" / "metrics.csv").read_bytes(), (self.tmp / "b" / "metrics.csv").read_bytes())
        self.assertEqual((self.tmp / "a" / CHECKPOINT_NAME).read_bytes(), (self.tmp / "b" / CHECKPOINT_NAME).read_bytes())

    def test_feedback_training(self):
        summary = run_experiment(self.spec("fb", "train.feedback=true"), record=False)
        self.assertNotIn("train_error", summary)
        metrics = pd.read_csv(self.tmp / "fb" / "metrics.csv")
        self.assertTrue(metrics["train_acc"].notna().all())

    def test_layerwise_series(self):
        run_experiment(self.spec("lw", "train.mode=layerwise"), record=False)
        self.assertTrue((self.tmp / "lw" / "metrics_main_layer0.csv").exists())
        self.assertTrue((self.tmp / "lw" / "metrics_main_layer1.csv").exists())

    def test_early_stopping(self):
        summary = run_experiment(
            self.spec("early", "data.validation=40", "train.early_stopping=true", "train.patience=1"), record=False
        )
        self.assertIn("best_epoch", summary)
        self.assertLessEqual(summary["epochs"], 3)

    def test_train_limit(self):
        summary = run_experiment(self.spec("limit", "data.train_limit=20", "train.accuracy_sample=0"), record=False)
        self.assertNotIn("train_error", summary)

    def test_feature_maps(self):
        run_experiment(self.spec("vis", "experiment.visualize=true"), record=False)
        self.assertTrue((self.tmp / "vis" / "features.pgm").exists())

    def test_augment_needs_crop_preset(self):
        with self.assertRaises(ConfigError):
            run_experiment(self.spec("aug", "train.augment=true"))
        self.assertEqual(ExperimentRun.objects.get().status, ExperimentRun.Status.FAILED)


class CheckpointProtocolTests(RunnerTestCase):
    def test_evaluation_matches_training_run(self):
        checkpoint = self.classification_checkpoint()
        trained = json.loads((self.tmp / "base" / SUMMARY_NAME).read_text())
        summary = ExperimentRunner(self.spec("eval"), record=False, checkpoint=checkpoint).execute("evaluation")
        self.assertEqual(summary["test_error"], trained["test_error"])
        self.assertEqual(summary["count"], 100)

    def test_evaluation_needs_checkpoint(self):
        with self.assertRaises(ConfigError):
            run_experiment(self.spec("eval"), record=False, protocol="evaluation")

    def test_scoring(self):
        checkpoint = self.classification_checkpoint()
        summary = run_experiment(self.spec("score"), record=False, checkpoint=checkpoint, protocol="scoring")
        self.assertGreater(summary["mean_score"], 0.0)
        self.assertEqual(set(summary["per_class"]), {"0", "1"})
        self.assertEqual(len(pd.read_csv(self.tmp / "score" / "scores.csv")), 100)

    def test_manifest_fingerprints_checkpoint(self):
        checkpoint = self.classification_checkpoint()
        run_experiment(self.spec("fp"), checkpoint=checkpoint, protocol="evaluation")
        inputs = ExperimentRun.objects.get().manifest["inputs"]
        self.assertEqual(inputs[0]["path"], str(checkpoint))
        self.assertEqual(inputs[0]["bytes"], checkpoint.stat().st_size)

    def test_unknown_protocol(self):
        with self.assertRaises(ConfigError):
            run_experiment(self.spec("x"), record=False, protocol="telepathy")


class ProtocolTests(RunnerTestCase):
    def test_few_shot(self):
        summary = run_experiment(self.spec("fs", "experiment.protocol=few_shot", "data.shots=[1, 2]"), record=False)
        self.assertEqual(set(summary["shots"]), {"1", "2"})
        self.assertTrue((self.tmp / "fs" / "metrics_1shot.csv").exists())

    def test_robustness(self):
        summary = run_experiment(
            self.spec("rob", "experiment.protocol=robustness", "inference.mask_ratios=[0.0, 1.0]",
                      "inference.line_widths=[0, 1]"),
            record=False,
        )
        self.assertLessEqual(summary["mask"]["0.0"], 0.5)
        self.assertEqual(summary["blank"]["mask"]["0.0"], 0)
        # Fully masked images are blank and count as errors.
        self.assertEqual(summary["mask"]["1.0"], 1.0)
        self.assertEqual(summary["blank"]["mask"]["1.0"], 100)
        frame = pd.read_csv(self.tmp / "rob" / "robustness.csv")
        self.assertEqual(list(frame["disturbance"]), ["mask", "mask", "lines", "lines"])
        self.assertEqual(list(frame["blank"]), [0, 100, 0, 0])

    def test_blank_images_count_as_errors(self):
        runner = ExperimentRunner(self.spec("blank"), record=False)
        model = runner.trained_classifier()
        test = runner.load_split("test")
        pixels = test.pixels()
        clean_error, _ = runner._disturbed_error(model, test, pixels)
        pixels[:10] = 0.0
        error, blank = runner._disturbed_error(model, test, pixels)
        self.assertEqual(blank, 10)
        self.assertGreaterEqual(error, clean_error)
        self.assertLessEqual(error, clean_error + 10 / len(test))

    def test_generation(self):
        summary = run_experiment(self.spec("gen", "experiment.protocol=generation"), record=False)
        self.assertTrue(0.0 <= summary["self_consistency"] <= 1.0)
        self.assertEqual(set(summary["per_class"]), {"0", "1"})
        self.assertTrue((self.tmp / "gen" / "generated.pgm").exists())

    def test_completion(self):
        summary = run_experiment(self.spec("comp", "experiment.protocol=completion"), record=False)
        self.assertEqual(summary["count"], 4)
        self.assertTrue(0.0 <= summary["step_one_accuracy"] <= 1.0)
        self.assertTrue((self.tmp / "comp" / "completion.pgm").exists())

    def test_anomaly(self):
        summary = run_experiment(
            self.spec("anom", "experiment.protocol=anomaly", "model.preset=toy_unlabelled", "data.normal_classes=[0]"),
            record=False,
        )
        self.assertEqual(summary["normal_classes"], [0])
        self.assertTrue(0.0 <= summary["auc"] <= 1.0)
        self.assertIsNotNone(summary["detection_rate"])
        model = load_checkpoint(self.tmp / "anom" / CHECKPOINT_NAME)
        self.assertIsNone(model.layout.label_block)

    def test_features(self):
        summary = run_experiment(
            self.spec("feat", "experiment.protocol=features", "model.preset=toy_unlabelled",
                      "readout.layers=[0, 1]", "readout.epochs=5"),
            record=False,
        )
        self.assertEqual(set(summary["readout"]), {"0", "1"})
        frame = pd.read_csv(self.tmp / "feat" / "readout.csv")
        self.assertEqual(list(frame["layer"]), [0, 1])

    def test_features_rejects_deep_readout(self):
        with self.assertRaises(ConfigError):
            run_experiment(
                self.spec("deep", "experiment.protocol=features", "model.preset=toy_unlabelled", "readout.layers=[2]"),
                record=False,
            )

    def test_features_at_depth(self):
        runner = ExperimentRunner(self.spec("depth", "model.preset=toy_unlabelled"), record=False)
        model = runner.build_model()
        rows = runner.eval_rows(runner.load_split("test"))
        np.testing.assert_array_equal(features_at(model, rows, 0), rows)
        self.assertEqual(features_at(model, rows, 1, batch_size=30).shape, (100, 6))


class ModelBuildTests(RunnerTestCase):
    def test_crop_preset_uses_small_receptive_field(self):
        self.assertEqual(model_preset("cifar_crop_local3").field_size, (5, 5))

    def test_receptive_field_from_config(self):
        runner = ExperimentRunner(
            self.spec("field", "model.preset=cifar_local3", "model.field_size=[3, 3]"), record=False
        )
        model = runner.build_model()
        self.assertEqual([layer.conn.field_size for layer in model.layers[:2]], [(3, 3), (3, 3)])

        default = ExperimentRunner(self.spec("preset", "model.preset=cifar_local3"), record=False).build_model()
        self.assertEqual(default.layers[0].conn.field_size, (9, 9))

    def test_receptive_field_is_validated(self):
        for value in ("[5]", "[0, 3]"):
            with self.assertRaises(ConfigError, msg=value):
                self.spec("bad", f"model.field_size={value}")
