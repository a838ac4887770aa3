from django.db import models
from django.utils import timezone
from django.utils.text import slugify


class TimestampMixin(models.Model):
    created_at = models.DateTimeField(default=timezone.now, editable=False)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True


class NamedMixin(models.Model):
    name = models.CharField(max_length=200)

    def __str__(self):
        return getattr(self, "name", super().__str__())

    class Meta:
        abstract = True


class RunSlugMixin(models.Model):
    """Unique slug built from the run name and seed, e.g. ``mnist-2layer-s7``."""

    slug = models.SlugField(max_length=220, unique=True, blank=True)

    def slug_base(self):
        seed = getattr(self, "seed", None)
        base = slugify(self.name)[:200] or "run"
        return base if seed is None else f"{base}-s{seed}"

    def save(self, *args, **kwargs):
        if not self.slug:
            base = self.slug_base()
            candidate, i = base, 2
            Model = self.__class__
            while Model.objects.filter(slug=candidate).exclude(pk=self.pk).exists():
                candidate = f"{base}-{i}"
                i += 1
            self.slug = candidate
        super().save(*args, **kwargs)

    class Meta:
        abstract = True
