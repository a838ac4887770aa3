import logging
from pathlib import Path

from django.db.models.signals import post_save, pre_save
from django.dispatch import receiver
from django.utils import timezone

from experiments.config import canonical_json, manifest_hash
from experiments.models import ExperimentRun, MetricsRecord

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class AppendOnlyError(Exception):
    pass


@receiver(pre_save, sender=ExperimentRun)
def sync_run_bookkeeping(sender, instance, **kwargs):
    """
    Keep ExperimentRun's derived fields consistent.

    - manifest_hash always matches the stored manifest.
    - finished_at is set once the run leaves RUNNING, cleared while running.
    """
    instance.manifest_hash = manifest_hash(instance.manifest)
    if instance.status == ExperimentRun.Status.RUNNING:
        if instance.finished_at is not None:
            instance.finished_at = None
    elif instance.finished_at is None:
        instance.finished_at = timezone.now()


@receiver(pre_save, sender=MetricsRecord)
def refuse_metric_rewrites(sender, instance, **kwargs):
    if instance.pk is not None and MetricsRecord.objects.filter(pk=instance.pk).exists():
        raise AppendOnlyError(f"metrics record {instance.pk} already exists and cannot be changed.")


@receiver(post_save, sender=ExperimentRun)
def write_manifest(sender, instance, created, **kwargs):
    if not created:
        return
    out = Path(instance.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"hash": instance.manifest_hash, **instance.manifest}
    (out / MANIFEST_NAME).write_text(canonical_json(payload, indent=2) + "\n", encoding="utf-8")
    logger.info("Run %s started, manifest %s", instance.slug, instance.manifest_hash)
