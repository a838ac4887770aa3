"""
Experiment protocols.

Every run creates an output directory holding ``manifest.json``,
``metrics.csv`` (one row per epoch), ``summary.json`` and, when a model was
trained, ``model.actl``. Runs and their per-epoch metrics are also recorded
in the database.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from core.checkpoint import load_checkpoint, save_checkpoint
from core.inference import (
    InferenceTask,
    anomaly_scores,
    classify,
    complete,
    error_rate,
    generate,
    is_anomalous,
    predict,
)
from core.layers import forward
from core.network import NormPolicy, train_unsupervised, train_with_feedback
from core.numerics import make_rng
from data.dataset import as_pixels, normalize_images
from data.subsets import (
    class_subset,
    few_shot_subset,
    split_validation,
    stratified_subset,
    validation_size,
)
from data.transforms import add_random_lines, center_crop, mask_bottom, row_augmenter
from experiments.config import ConfigError, canonical_json, file_fingerprint
from experiments.models import ExperimentRun, MetricsRecord
from experiments.readout import train_linear_readout
from experiments.visualize import tile_grid, to_intensity, visualize_features, write_pnm

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "train_acc", "test_acc", "norm_activation", "seconds"]
CHECKPOINT_NAME = "model.actl"
SUMMARY_NAME = "summary.json"


class MetricsLog:
    """Per-epoch metrics for every series of a run, mirrored to the database."""

    def __init__(self, run=None, deterministic=False):
        self.run = run
        self.deterministic = deterministic
        self.series = {}

    def record(self, series, entry, train_acc=None, test_acc=None):
        row = {
            "epoch": entry.epoch,
            "train_acc": train_acc,
            "test_acc": test_acc,
            "norm_activation": entry.norm_activation,
            "seconds": 0.0 if self.deterministic else entry.seconds,
        }
        self.series.setdefault(series, []).append(row)
        if self.run is not None:
            MetricsRecord.objects.create(run=self.run, series=series, **row)
        return row

    def write(self, out):
        paths = []
        for series, rows in self.series.items():
            name = "metrics.csv" if series == "main" else f"metrics_{series}.csv"
            frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
            frame.to_csv(out / name, index=False, float_format="%.6f", lineterminator="\n")
            paths.append(out / name)
        return paths


class ExperimentRunner:
    def __init__(self, spec, record=True, checkpoint=None):
        self.spec = spec
        self.record = record
        self.checkpoint = checkpoint or spec.config["model"]["checkpoint"] or None
        self.out = Path(spec.output_dir)
        self.preset = spec.dataset
        self.codec = self.preset.codec()
        self.run = None
        self.metrics = None

    # ------------------ lifecycle ------------------

    def manifest(self):
        inputs = []
        if self.preset.kind != "toy":
            for split in ("train", "test"):
                try:
                    inputs.extend(file_fingerprint(p) for p in self.preset.files(self.spec.dataset_dir, split))
                except FileNotFoundError:
                    # Protocols that only need one split report the missing file when they load it.
                    continue
        if self.checkpoint:
            inputs.append(file_fingerprint(self.checkpoint))
        return {"config": self.spec.config, "inputs": inputs}

    def execute(self, protocol=None):
        protocol = protocol or self.spec.protocol
        handler = getattr(self, f"run_{protocol}", None)
        if handler is None:
            raise ConfigError(f"unknown protocol {protocol!r}.")
        self.out.mkdir(parents=True, exist_ok=True)
        if self.record:
            self.run = ExperimentRun.objects.create(
                name=self.spec.name,
                protocol=protocol,
                dataset_preset=self.preset.name,
                model_preset=self.spec.model.name,
                seed=self.spec.seed,
                manifest=self.manifest(),
                output_dir=str(self.out),
            )
        self.metrics = MetricsLog(self.run, self.spec.deterministic)
        logger.info("Running %s protocol for %s into %s", protocol, self.spec.name, self.out)
        try:
            summary = handler()
        except Exception as exc:
            if self.run is not None:
                self.run.status = ExperimentRun.Status.FAILED
                self.run.summary = {"error": str(exc)}
                self.run.save()
            logger.error("Run %s failed: %s", self.spec.name, exc)
            raise
        summary = {"name": self.spec.name, "protocol": protocol, "seed": self.spec.seed, **summary}
        self.metrics.write(self.out)
        (self.out / SUMMARY_NAME).write_text(canonical_json(summary, indent=2) + "\n", encoding="utf-8")
        if self.run is not None:
            self.run.status = ExperimentRun.Status.FINISHED
            self.run.summary = summary
            self.run.save()
        return summary

    # ------------------ data ------------------

    def load_split(self, split):
        dataset = self.preset.load(self.spec.dataset_dir, split, seed=self.spec.seed)
        limit = self.spec.config["data"][f"{split}_limit"]
        if limit and limit < len(dataset):
            dataset = stratified_subset(dataset, limit, seed=self.spec.seed)
        return dataset

    def load_training(self):
        """Training set and optional validation split."""
        train = self.load_split("train")
        count = self.spec.config["data"]["validation"]
        if count == -1:
            count = validation_size(len(train))
        if count:
            return split_validation(train, count, seed=self.spec.seed)
        return train, None

    def eval_rows(self, dataset):
        if self.preset.crop_side:
            return normalize_images(center_crop(dataset.pixels(), self.preset.crop_side))
        return dataset.vectors()

    def training_rows(self, dataset):
        """Normalized data rows and the batch augmentation to apply to them, if any."""
        if self.spec.config["train"]["augment"]:
            if not self.preset.crop_side:
                raise ConfigError("train.augment needs a dataset preset with a crop size.")
            return dataset.vectors(), row_augmenter(self.preset.image_shape, self.preset.crop_side)
        return self.eval_rows(dataset), None

    def accuracy_rows(self, dataset):
        count = self.spec.config["train"]["accuracy_sample"]
        if not count:
            return None, None
        if count < len(dataset):
            dataset = dataset.subset(np.sort(make_rng(self.spec.seed).permutation(len(dataset))[:count]))
        return self.eval_rows(dataset), dataset.labels

    # ------------------ models ------------------

    def build_model(self, labelled=None, seed=None):
        if self.checkpoint:
            return load_checkpoint(self.checkpoint)
        preset = self.spec.model
        labelled = preset.labelled if labelled is None else labelled
        model_cfg = self.spec.config["model"]
        return preset.build(
            self.preset.layout(labelled=labelled),
            make_rng(self.spec.seed if seed is None else seed),
            sigma=model_cfg["sigma"],
            activation=model_cfg.get("activation"),
            norm_policy=NormPolicy(model_cfg["norm_policy"]),
            field_size=model_cfg.get("field_size"),
        )

    def save_model(self, model):
        path = save_checkpoint(model, self.out / CHECKPOINT_NAME)
        if self.run is not None:
            self.run.checkpoint = str(path)
            self.run.save()
        return path

    def trained_classifier(self):
        """The configured checkpoint, or a freshly trained classification model."""
        if self.checkpoint:
            return load_checkpoint(self.checkpoint)
        train, validation = self.load_training()
        model = self.build_model(labelled=True)
        self.train_classifier(model, train, validation, self.load_split("test"))
        self.save_model(model)
        return model

    def train_classifier(self, model, train, validation=None, test=None, series="main"):
        if model.layout.label_block is None:
            raise ConfigError("classification needs a model with a label block.")
        spec = self.spec
        train_cfg = spec.config["train"]
        cfg = spec.train_config()
        codec = self.codec
        data_rows, augment = self.training_rows(train)
        test_rows = self.eval_rows(test) if test is not None else None
        val_rows = self.eval_rows(validation) if validation is not None else None
        acc_rows, acc_labels = (None, None) if cfg.feedback else self.accuracy_rows(train)
        early = train_cfg["early_stopping"] and val_rows is not None
        best = {"error": np.inf, "layers": None, "epoch": None, "stale": 0}
        every = train_cfg["eval_every"]

        def on_epoch(entry):
            last = entry.epoch == cfg.epochs - 1
            evaluate = every and ((entry.epoch + 1) % every == 0 or last)
            test_acc = train_acc = None
            if evaluate and test_rows is not None:
                test_acc = 1.0 - error_rate(model, test_rows, test.labels, codec)
            if entry.train_accuracy is not None:
                train_acc = entry.train_accuracy
            elif evaluate and acc_rows is not None:
                train_acc = 1.0 - error_rate(model, acc_rows, acc_labels, codec)
            name = series if entry.layer is None else f"{series}_layer{entry.layer}"
            self.metrics.record(name, entry, train_acc, test_acc)
            if not early:
                return False
            error = error_rate(model, val_rows, validation.labels, codec)
            if error < best["error"]:
                best.update(error=error, layers=[layer.w.copy() for layer in model.layers],
                            epoch=entry.epoch, stale=0)
                return False
            best["stale"] += 1
            return best["stale"] >= train_cfg["patience"]

        if cfg.feedback is not None:
            log = train_with_feedback(model, data_rows, train.labels, cfg, codec, augment, on_epoch)
        else:
            labels = codec.encode(train.labels)
            if augment is None:
                inputs = model.compose(data_rows, labels)
                composed = None
            else:
                inputs = np.hstack([data_rows, labels])
                split = data_rows.shape[1]

                def composed(rows, rng):
                    return model.compose(augment(rows[:, :split], rng), rows[:, split:])
            log = train_unsupervised(model, inputs, cfg, augment=composed, on_epoch=on_epoch)

        if early and best["layers"] is not None:
            for layer, weights in zip(model.layers, best["layers"]):
                layer.w[...] = weights
            logger.info("Restored weights from epoch %d (validation error %.4f)", best["epoch"], best["error"])

        summary = {
            "epochs": len(log.epochs),
            "stopped_early": log.stopped_early,
            "norm_activation": log.activations[-1] if log.epochs else None,
        }
        if early:
            summary.update(best_epoch=best["epoch"], validation_error=best["error"])
        if test_rows is not None:
            summary["test_error"] = error_rate(model, test_rows, test.labels, codec)
        if acc_rows is not None:
            summary["train_error"] = error_rate(model, acc_rows, acc_labels, codec)
        return summary

    def write_feature_maps(self, model, rows, name="features", layer_index=0):
        inputs = rows if rows.shape[1] == model.fan_in else model.compose(rows)
        maps = visualize_features(model, inputs, layer_index=layer_index)
        return write_pnm(self.out / f"{name}.pgm" if maps.maps.shape[-1] == 1 else self.out / f"{name}.ppm",
                         tile_grid(maps.maps, columns=6))

    # ------------------ protocols ------------------

    def run_classification(self):
        train, validation = self.load_training()
        test = self.load_split("test")
        model = self.build_model(labelled=True)
        summary = self.train_classifier(model, train, validation, test)
        self.save_model(model)
        if self.spec.config["experiment"]["visualize"]:
            self.write_feature_maps(
                model, model.compose(self.eval_rows(train), self.codec.encode(train.labels))
            )
        return summary

    def run_evaluation(self):
        if not self.checkpoint:
            raise ConfigError("evaluation needs a checkpoint.")
        model = load_checkpoint(self.checkpoint)
        test = self.load_split("test")
        return {"test_error": error_rate(model, self.eval_rows(test), test.labels, self.codec), "count": len(test)}

    def run_few_shot(self):
        data_cfg = self.spec.config["data"]
        train = self.load_split("train")
        test = self.load_split("test")
        errors = {}
        model = None
        for n in sorted(data_cfg["shots"]):
            subset = few_shot_subset(train, n, seed=self.spec.seed, pool_size=data_cfg["pool"])
            model = self.build_model(labelled=True)
            result = self.train_classifier(model, subset, None, test, series=f"{n}shot")
            errors[str(n)] = result["test_error"]
            logger.info("%d-shot test error %.4f", n, result["test_error"])
        if model is not None and self.spec.config["experiment"]["visualize"]:
            self.write_feature_maps(model, model.compose(self.eval_rows(subset), self.codec.encode(subset.labels)))
        return {"shots": errors}

    def run_robustness(self):
        model = self.trained_classifier()
        test = self.load_split("test")
        pixels = test.pixels()
        inference = self.spec.config["inference"]
        rows = []
        for ratio in inference["mask_ratios"]:
            rows.append(("mask", ratio, *self._disturbed_error(model, test, mask_bottom(pixels, ratio))))
        rng = make_rng(self.spec.seed)
        for width in inference["line_widths"]:
            rows.append(("lines", width, *self._disturbed_error(model, test, add_random_lines(pixels, width, rng))))
        frame = pd.DataFrame(rows, columns=["disturbance", "level", "error", "blank"])
        frame.to_csv(self.out / "robustness.csv", index=False, float_format="%.6f", lineterminator="\n")
        summary = {"mask": {}, "lines": {}, "blank": {"mask": {}, "lines": {}}}
        for disturbance, level, error, blank in rows:
            summary[disturbance][str(level)] = error
            summary["blank"][disturbance][str(level)] = blank
        return summary

    def _disturbed_error(self, model, test, images):
        """Error rate on disturbed images and the number left blank; a blank image counts as an error."""
        pixels = as_pixels(images)
        if self.preset.crop_side:
            pixels = center_crop(pixels, self.preset.crop_side)
        blank = ~np.any(pixels.reshape(len(pixels), -1) != 0, axis=1)
        wrong = int(np.count_nonzero(blank))
        if wrong:
            logger.warning("%d of %d disturbed test images are blank; scored as errors", wrong, len(pixels))
        kept = ~blank
        if kept.any():
            predicted, _ = predict(model, normalize_images(pixels[kept]), self.codec)
            wrong += int(np.count_nonzero(predicted != test.labels[kept]))
        return wrong / len(pixels), int(np.count_nonzero(blank))

    def run_generation(self):
        model = self.trained_classifier()
        samples = self.spec.config["inference"]["samples"]
        images, per_class = [], {}
        consistent = 0
        shape = self.preset.input_shape
        for class_id in range(self.codec.classes):
            hits = 0
            for k in range(samples):
                seed = self.spec.seed * 100003 + class_id * samples + k
                result = generate(model, class_id, self.spec.generation_config(seed=seed), self.codec)
                hits += int(classify(model, result.data, self.codec).label == class_id)
                images.append(np.abs(result.data).reshape(shape))
            per_class[str(class_id)] = hits / samples
            consistent += hits
        self._write_grid("generated", images, columns=samples)
        return {"self_consistency": consistent / (samples * self.codec.classes), "per_class": per_class}

    def run_completion(self):
        model = self.trained_classifier()
        test = self.load_split("test")
        count = min(len(test), self.spec.config["inference"]["samples"] * self.codec.classes)
        ratio = self.spec.config["inference"]["completion_mask"]
        shape = self.preset.input_shape
        rows = self.eval_rows(test)[:count]
        visible = mask_bottom(np.ones(shape, dtype=np.float32), ratio).reshape(-1) > 0
        cfg = self.spec.generation_config()
        correct = 0
        images = []
        for index in range(count):
            result = complete(model, InferenceTask.masked(rows[index], visible), self.codec, cfg)
            correct += int(result.label == test.labels[index])
            images.append(np.where(visible, rows[index], 0.0).reshape(shape))
            images.append(np.abs(result.data).reshape(shape))
        self._write_grid("completion", images, columns=2)
        return {"step_one_accuracy": correct / count if count else None, "count": count, "mask_ratio": ratio}

    def run_anomaly(self):
        normal = sorted(set(self.spec.config["data"]["normal_classes"]))
        train = class_subset(self.load_split("train"), normal)
        test = self.load_split("test")
        model = self.build_model(labelled=False)
        if model.layout.label_block is not None:
            raise ConfigError("anomaly detection needs a model without a label block.")
        inputs = model.compose(self.eval_rows(train))
        log = train_unsupervised(model, inputs, self.spec.train_config(), on_epoch=self._unsupervised_logger())
        self.save_model(model)

        reference, _ = self.accuracy_rows(train)
        threshold = float(np.quantile(
            anomaly_scores(model, reference if reference is not None else inputs),
            self.spec.config["inference"]["anomaly_quantile"],
        ))
        scores = anomaly_scores(model, self.eval_rows(test))
        is_normal = np.isin(test.labels, normal)
        flags = is_anomalous(scores, threshold)
        pd.DataFrame(
            {"label": test.labels, "score": scores, "anomalous": flags.astype(int)}
        ).to_csv(self.out / "scores.csv", index_label="index", float_format="%.8f", lineterminator="\n")
        summary = {
            "normal_classes": normal,
            "epochs": len(log.epochs),
            "threshold": threshold,
            "detection_rate": float(np.mean(flags[~is_normal])) if np.any(~is_normal) else None,
            "false_alarm_rate": float(np.mean(flags[is_normal])) if np.any(is_normal) else None,
        }
        if 0 < is_normal.sum() < len(is_normal):
            summary["auc"] = float(roc_auc_score(is_normal, scores))
        return summary

    def run_scoring(self):
        if not self.checkpoint:
            raise ConfigError("scoring needs a checkpoint.")
        model = load_checkpoint(self.checkpoint)
        test = self.load_split("test")
        scores = anomaly_scores(model, self.eval_rows(test), self.codec)
        pd.DataFrame({"label": test.labels, "score": scores}).to_csv(
            self.out / "scores.csv", index_label="index", float_format="%.8f", lineterminator="\n"
        )
        per_class = pd.Series(scores).groupby(test.labels).mean()
        return {"mean_score": float(scores.mean()), "per_class": {str(k): float(v) for k, v in per_class.items()}}

    def run_features(self):
        train, _ = self.load_training()
        test = self.load_split("test")
        model = self.build_model(labelled=False)
        train_rows, test_rows = self.eval_rows(train), self.eval_rows(test)
        if not self.checkpoint:
            log = train_unsupervised(model, model.compose(train_rows), self.spec.train_config(),
                                     on_epoch=self._unsupervised_logger())
            logger.info("Feature stack trained for %d epochs", len(log.epochs))
            self.save_model(model)

        labelled = train
        limit = self.spec.config["data"]["train_limit"]
        readout_rows = train_rows
        if limit and limit < len(train):
            labelled = stratified_subset(train, limit, seed=self.spec.seed)
            readout_rows = self.eval_rows(labelled)
        errors, table = {}, []
        for depth in self.spec.config["readout"]["layers"]:
            if depth > len(model.layers):
                raise ConfigError(f"readout layer {depth} exceeds the {len(model.layers)}-layer model.")
            result = train_linear_readout(
                features_at(model, readout_rows, depth), labelled.labels, self.spec.readout_config(),
                classes=self.codec.classes, test=(features_at(model, test_rows, depth), test.labels),
            )
            errors[str(depth)] = result.test_error
            table.append((depth, result.train_error, result.test_error))
        pd.DataFrame(table, columns=["layer", "train_error", "test_error"]).to_csv(
            self.out / "readout.csv", index=False, float_format="%.6f", lineterminator="\n"
        )
        if self.spec.config["experiment"]["visualize"]:
            self.write_feature_maps(model, model.compose(train_rows))
        return {"readout": errors, "labelled": len(labelled)}

    # ------------------ helpers ------------------

    def _unsupervised_logger(self):
        def on_epoch(entry):
            series = "main" if entry.layer is None else f"layer{entry.layer}"
            self.metrics.record(series, entry)
            return False

        return on_epoch

    def _write_grid(self, name, images, columns):
        images = np.asarray(images)
        suffix = "pgm" if images.shape[-1] == 1 else "ppm"
        return write_pnm(self.out / f"{name}.{suffix}", tile_grid(images, columns, render=to_intensity))


def features_at(model, rows, depth, batch_size=1000):
    """Outputs ``f(y)`` of layer ``depth`` (0 means the input rows themselves)."""
    if depth == 0:
        return np.asarray(rows)
    inputs = model.compose(rows)
    chunks = []
    for start in range(0, len(inputs), batch_size):
        current = inputs[start:start + batch_size]
        for layer in model.layers[:depth]:
            _, current = forward(layer, current)
        chunks.append(current)
    return np.vstack(chunks)


def run_experiment(spec, record=True, checkpoint=None, protocol=None):
    return ExperimentRunner(spec, record=record, checkpoint=checkpoint).execute(protocol)
