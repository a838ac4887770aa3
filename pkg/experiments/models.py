from django.db import models

from experiments.mixins import NamedMixin, RunSlugMixin, TimestampMixin


class ExperimentRun(TimestampMixin, NamedMixin, RunSlugMixin):
    class Protocol(models.TextChoices):
        CLASSIFICATION = "classification", "Classification"
        FEW_SHOT = "few_shot", "Few-shot"
        ROBUSTNESS = "robustness", "Robustness"
        GENERATION = "generation", "Generation"
        COMPLETION = "completion", "Completion"
        ANOMALY = "anomaly", "Anomaly detection"
        FEATURES = "features", "Feature readout"
        SCORING = "scoring", "Scoring"
        EVALUATION = "evaluation", "Evaluation"

    class Status(models.TextChoices):
        RUNNING = "running", "Running"
        FINISHED = "finished", "Finished"
        FAILED = "failed", "Failed"

    protocol = models.CharField(max_length=32, choices=Protocol.choices, default=Protocol.CLASSIFICATION)
    dataset_preset = models.CharField(max_length=64)
    model_preset = models.CharField(max_length=64)
    seed = models.PositiveIntegerField(default=0)
    # Resolved config plus input-file fingerprints; enough to re-run.
    manifest = models.JSONField(default=dict)
    manifest_hash = models.CharField(max_length=40, blank=True, db_index=True)
    output_dir = models.CharField(max_length=500)
    checkpoint = models.CharField(max_length=500, blank=True)
    status = models.CharField(max_length=16, choices=Status.choices, default=Status.RUNNING)
    summary = models.JSONField(default=dict, blank=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ("-created_at",)

    def __str__(self):
        return f"{self.name} ({self.protocol}, seed {self.seed})"


class MetricsRecord(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="metrics")
    # Several curves per run (few-shot sizes, layerwise layers); "main" otherwise.
    series = models.CharField(max_length=32, default="main")
    epoch = models.PositiveIntegerField()
    train_acc = models.FloatField(null=True, blank=True)
    test_acc = models.FloatField(null=True, blank=True)
    norm_activation = models.FloatField()
    seconds = models.FloatField(default=0.0)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ("run", "series", "epoch")
        unique_together = (("run", "series", "epoch"),)

    def __str__(self):
        return f"{self.run} {self.series} epoch {self.epoch}"
