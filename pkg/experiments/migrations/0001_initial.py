# Generated by Django 5.2.6 on 2026-10-17 09:12

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("created_at", models.DateTimeField(default=django.utils.timezone.now, editable=False)),
                ("updated_at", models.DateTimeField(auto_now=True)),
                ("name", models.CharField(max_length=200)),
                ("slug", models.SlugField(blank=True, max_length=220, unique=True)),
                ("protocol", models.CharField(choices=[("classification", "Classification"), ("few_shot", "Few-shot"), ("robustness", "Robustness"), ("generation", "Generation"), ("completion", "Completion"), ("anomaly", "Anomaly detection"), ("features", "Feature readout"), ("scoring", "Scoring"), ("evaluation", "Evaluation")], default="classification", max_length=32)),
                ("dataset_preset", models.CharField(max_length=64)),
                ("model_preset", models.CharField(max_length=64)),
                ("seed", models.PositiveIntegerField(default=0)),
                ("manifest", models.JSONField(default=dict)),
                ("manifest_hash", models.CharField(blank=True, db_index=True, max_length=40)),
                ("output_dir", models.CharField(max_length=500)),
                ("checkpoint", models.CharField(blank=True, max_length=500)),
                ("status", models.CharField(choices=[("running", "Running"), ("finished", "Finished"), ("failed", "Failed")], default="running", max_length=16)),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ("-created_at",),
            },
        ),
        migrations.CreateModel(
            name="MetricsRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("series", models.CharField(default="main", max_length=32)),
                ("epoch", models.PositiveIntegerField()),
                ("train_acc", models.FloatField(blank=True, null=True)),
                ("test_acc", models.FloatField(blank=True, null=True)),
                ("norm_activation", models.FloatField()),
                ("seconds", models.FloatField(default=0.0)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("run", models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name="metrics", to="experiments.experimentrun")),
            ],
            options={
                "ordering": ("run", "series", "epoch"),
                "unique_together": {("run", "series", "epoch")},
            },
        ),
    ]
