from django.conf import settings
from rest_framework import serializers
from drf_spectacular.utils import OpenApiExample, extend_schema_serializer

from core.layers import Activation
from core.network import NormPolicy, TrainingMode
from experiments.models import ExperimentRun, MetricsRecord
from experiments.presets import DATASET_PRESETS, MODEL_PRESETS

PROTOCOLS = [choice for choice, _ in ExperimentRun.Protocol.choices]


def default_seed():
    return getattr(settings, "ACTIVATION_LEARNING", {}).get("DEFAULT_SEED", 0)


class StrictSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError("Expected a section of key = value pairs.")
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


# ------------------ config sections ------------------
class ExperimentSectionSerializer(StrictSerializer):
    name = serializers.CharField(max_length=200, default="experiment")
    protocol = serializers.ChoiceField(choices=PROTOCOLS, default="classification")
    seed = serializers.IntegerField(min_value=0, default=default_seed)
    out = serializers.CharField(allow_blank=True, default="")
    deterministic = serializers.BooleanField(default=False)
    visualize = serializers.BooleanField(default=False)


class DataSectionSerializer(StrictSerializer):
    preset = serializers.ChoiceField(choices=sorted(DATASET_PRESETS), default="mnist")
    dir = serializers.CharField(allow_blank=True, default="")
    # -1 scales the 5000-of-60000 validation split to the training set; 0 disables it.
    validation = serializers.IntegerField(min_value=-1, default=0)
    train_limit = serializers.IntegerField(min_value=0, default=0)
    test_limit = serializers.IntegerField(min_value=0, default=0)
    shots = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[1, 2, 5, 10])
    pool = serializers.IntegerField(min_value=1, default=10)
    normal_classes = serializers.ListField(
        child=serializers.IntegerField(min_value=0), default=[0, 1, 2, 3, 4]
    )


class ModelSectionSerializer(StrictSerializer):
    preset = serializers.ChoiceField(choices=sorted(MODEL_PRESETS), default="mnist_2layer")
    activation = serializers.ChoiceField(choices=[a.value for a in Activation], required=False)
    sigma = serializers.FloatField(min_value=0.0, default=0.01)
    norm_policy = serializers.ChoiceField(choices=[p.value for p in NormPolicy], default=NormPolicy.PER_BLOCK.value)
    # Receptive field of locally connected presets, [rows, cols]; null keeps the preset's.
    field_size = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2, required=False, allow_null=True,
        default=None,
    )
    checkpoint = serializers.CharField(allow_blank=True, default="")


class TrainSectionSerializer(StrictSerializer):
    eta = serializers.FloatField(default=1e-3)
    eta_final = serializers.FloatField(required=False, allow_null=True, default=None)
    epochs = serializers.IntegerField(min_value=0, default=30)
    batch_size = serializers.IntegerField(default=100)
    mode = serializers.ChoiceField(choices=[m.value for m in TrainingMode], default=TrainingMode.SIMULTANEOUS.value)
    feedback = serializers.BooleanField(default=False)
    early_stopping = serializers.BooleanField(default=False)
    patience = serializers.IntegerField(min_value=1, default=5)
    augment = serializers.BooleanField(default=False)
    shuffle = serializers.BooleanField(default=True)
    eval_every = serializers.IntegerField(min_value=0, default=1)
    accuracy_sample = serializers.IntegerField(min_value=0, default=10000)

    def validate_eta(self, value):
        if value <= 0:
            raise serializers.ValidationError("eta must be positive.")
        return value

    def validate_eta_final(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("eta_final must be positive.")
        return value

    def validate_batch_size(self, value):
        if value < 1:
            raise serializers.ValidationError("batch_size must be at least 1.")
        return value

    def validate(self, attrs):
        if attrs.get("feedback") and attrs.get("mode") == TrainingMode.LAYERWISE.value:
            raise serializers.ValidationError("feedback training cannot run layerwise.")
        return attrs


class FeedbackSectionSerializer(StrictSerializer):
    unlearning = serializers.FloatField(default=0.9)
    gate_slope = serializers.FloatField(min_value=0.0, default=5.0)
    gate_intercept = serializers.FloatField(default=1.0)
    start_threshold = serializers.FloatField(min_value=0.0, default=0.0)

    def validate_unlearning(self, value):
        if not 0.0 <= value <= 1.0:
            raise serializers.ValidationError("unlearning factor must lie in [0, 1].")
        return value


class InferenceSectionSerializer(StrictSerializer):
    l1_beta = serializers.FloatField(min_value=0.0, default=0.003)
    noise_std = serializers.FloatField(min_value=0.0, default=0.03)
    steps = serializers.IntegerField(min_value=0, default=500)
    step_size = serializers.FloatField(min_value=0.0, default=0.05)
    penalty = serializers.FloatField(min_value=0.0, default=1.0)
    samples = serializers.IntegerField(min_value=1, default=10)
    mask_ratios = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=1.0),
                                        default=[0.0, 0.25, 0.5])
    line_widths = serializers.ListField(child=serializers.IntegerField(min_value=0), default=[0, 1, 2])
    completion_mask = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    anomaly_quantile = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.05)


class ReadoutSectionSerializer(StrictSerializer):
    step_size = serializers.FloatField(default=0.1)
    epochs = serializers.IntegerField(min_value=0, default=100)
    batch_size = serializers.IntegerField(min_value=1, default=100)
    layers = serializers.ListField(child=serializers.IntegerField(min_value=0), default=[0, 1, 2])

    def validate_step_size(self, value):
        if value <= 0:
            raise serializers.ValidationError("step_size must be positive.")
        return value


class ExperimentConfigSerializer(StrictSerializer):
    """The whole experiment file; missing sections take their defaults."""

    experiment = ExperimentSectionSerializer()
    data = DataSectionSerializer()
    model = ModelSectionSerializer()
    train = TrainSectionSerializer()
    feedback = FeedbackSectionSerializer()
    inference = InferenceSectionSerializer()
    readout = ReadoutSectionSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{name: {} for name in self.fields}, **data}
        return super().to_internal_value(data)


# ------------------ runs ------------------
class MetricsRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = MetricsRecord
        fields = ["id", "series", "epoch", "train_acc", "test_acc", "norm_activation", "seconds", "created_at"]


@extend_schema_serializer(
    examples=[
        OpenApiExample(
            "Finished run",
            value={
                "id": 1,
                "name": "mnist-2layer",
                "protocol": "classification",
                "status": "finished",
                "summary": {"test_error": 0.033},
            },
        )
    ]
)
class ExperimentRunSerializer(serializers.ModelSerializer):
    metrics_count = serializers.SerializerMethodField()

    class Meta:
        model = ExperimentRun
        fields = [
            "id",
            "name",
            "slug",
            "protocol",
            "dataset_preset",
            "model_preset",
            "seed",
            "status",
            "manifest_hash",
            "output_dir",
            "checkpoint",
            "summary",
            "manifest",
            "metrics_count",
            "created_at",
            "updated_at",
            "finished_at",
        ]

    def get_metrics_count(self, obj):
        return obj.metrics.count()


class ClassifyRequestSerializer(serializers.Serializer):
    data = serializers.ListField(child=serializers.FloatField(), min_length=1)

    def validate_data(self, value):
        if not any(v != 0 for v in value):
            raise serializers.ValidationError("data must not be all zeros.")
        return value


class ScoreRequestSerializer(ClassifyRequestSerializer):
    threshold = serializers.FloatField(required=False)
