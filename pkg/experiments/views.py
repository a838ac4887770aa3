from rest_framework import status, viewsets
from rest_framework.decorators import action
from rest_framework.response import Response

from drf_spectacular.utils import extend_schema

from core.checkpoint import load_checkpoint
from core.exceptions import ActivationLearningError
from core.inference import anomaly_score, classify, is_anomalous
from data.dataset import normalize_image
from experiments.models import ExperimentRun, MetricsRecord
from experiments.presets import dataset_preset
from experiments.serializers import (
    ClassifyRequestSerializer,
    ExperimentRunSerializer,
    MetricsRecordSerializer,
    ScoreRequestSerializer,
)


@extend_schema(tags=["Runs"])
class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = ExperimentRun.objects.prefetch_related("metrics")
    serializer_class = ExperimentRunSerializer

    filterset_fields = ["protocol", "status", "dataset_preset", "model_preset", "seed"]
    search_fields = ["name", "slug"]
    ordering_fields = ["created_at", "finished_at", "name", "seed"]
    ordering = ["-created_at"]

    def load_model(self, run):
        if not run.checkpoint:
            return None, Response({"detail": "This run has no checkpoint."}, status=status.HTTP_409_CONFLICT)
        try:
            return load_checkpoint(run.checkpoint), None
        except FileNotFoundError:
            return None, Response(
                {"detail": f"Checkpoint file not found: {run.checkpoint}"}, status=status.HTTP_404_NOT_FOUND
            )

    def data_vector(self, model, values):
        width = model.layout.data_block.size
        if len(values) != width:
            return None, Response({"data": [f"Expected {width} values, got {len(values)}."]},
                                  status=status.HTTP_400_BAD_REQUEST)
        return normalize_image(values), None

    @extend_schema(request=ClassifyRequestSerializer, description="Classify a data vector with the run's model.")
    @action(detail=True, methods=["post"])
    def classify(self, request, pk=None):
        run = self.get_object()
        serializer = ClassifyRequestSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        model, error = self.load_model(run)
        if error is not None:
            return error
        if model.layout.label_block is None:
            return Response({"detail": "This run's model has no label block."}, status=status.HTTP_409_CONFLICT)
        data, error = self.data_vector(model, serializer.validated_data["data"])
        if error is not None:
            return error
        result = classify(model, data, dataset_preset(run.dataset_preset).codec())
        return Response({
            "label": result.label,
            "activations": [float(a) for a in result.activations],
            "degenerate": result.degenerate,
        })

    @extend_schema(request=ScoreRequestSerializer, description="Output activation of a data vector (anomaly score).")
    @action(detail=True, methods=["post"])
    def score(self, request, pk=None):
        run = self.get_object()
        serializer = ScoreRequestSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        model, error = self.load_model(run)
        if error is not None:
            return error
        data, error = self.data_vector(model, serializer.validated_data["data"])
        if error is not None:
            return error
        try:
            score = anomaly_score(model, data, dataset_preset(run.dataset_preset).codec())
        except ActivationLearningError as exc:
            return Response({"detail": str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        payload = {"score": score}
        threshold = serializer.validated_data.get("threshold")
        if threshold is not None:
            payload["anomalous"] = is_anomalous(score, threshold)
        return Response(payload)


@extend_schema(tags=["Metrics"])
class MetricsRecordViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = MetricsRecord.objects.select_related("run")
    serializer_class = MetricsRecordSerializer

    filterset_fields = ["series", "epoch"]
    ordering_fields = ["epoch", "series"]
    ordering = ["series", "epoch"]

    def get_queryset(self):
        qs = super().get_queryset()
        # Nested route: /api/runs/<run_pk>/metrics/
        run_pk = self.kwargs.get("run_pk")
        if run_pk:
            qs = qs.filter(run_id=run_pk)
        return qs
