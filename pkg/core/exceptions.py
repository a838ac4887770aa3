class ActivationLearningError(Exception):
    """Base class for every error raised by the learning engine."""


class ShapeError(ActivationLearningError, ValueError):
    pass


class NonFiniteError(ActivationLearningError, ValueError):
    pass


class AsymmetricMatrixError(ActivationLearningError, ValueError):
    pass


class EmptySampleError(ActivationLearningError, ValueError):
    pass


class LayoutMismatchError(ActivationLearningError, ValueError):
    pass


class DivergenceError(ActivationLearningError):
    """Weights became non-finite while training."""

    def __init__(self, batch_index, layer_index=None):
        self.batch_index = batch_index
        self.layer_index = layer_index
        where = f"batch {batch_index}"
        if layer_index is not None:
            where += f", layer {layer_index}"
        super().__init__(f"Training diverged at {where}.")


class InferenceAbortedError(ActivationLearningError):
    def __init__(self, step, reason="non-finite objective"):
        self.step = step
        super().__init__(f"Inference aborted at step {step}: {reason}.")


class CheckpointError(ActivationLearningError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionSkewError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class DegenerateInputError(ActivationLearningError, ValueError):
    pass
