from django.contrib import admin

from experiments.models import ExperimentRun, MetricsRecord


class MetricsRecordInline(admin.TabularInline):
    model = MetricsRecord
    extra = 0
    readonly_fields = ("series", "epoch", "train_acc", "test_acc", "norm_activation", "seconds", "created_at")
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("name", "protocol", "dataset_preset", "model_preset", "seed", "status", "created_at")
    list_filter = ("protocol", "status", "dataset_preset")
    search_fields = ("name", "slug", "manifest_hash")
    readonly_fields = ("slug", "manifest_hash", "finished_at", "created_at", "updated_at")
    inlines = [MetricsRecordInline]


@admin.register(MetricsRecord)
class MetricsRecordAdmin(admin.ModelAdmin):
    list_display = ("run", "series", "epoch", "train_acc", "test_acc", "norm_activation")
    list_filter = ("series",)
