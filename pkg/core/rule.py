"""
The local competitive learning rule.

For input ``x`` and net input ``y = w^T x`` the per-sample update is

    dw_ij = eta * y_j * (x_i - sum_k y_k w_ik)

The feedback term ``sum_k y_k w_ik`` comes from every neuron receiving
``x_i``; that is what makes neighbouring neurons compete. Batches apply the
mean of the per-sample updates.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import NonFiniteError, ShapeError
from core.numerics import ACCUMULATOR, FLOAT, matmul, top_eigenpairs

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-3


@dataclass(frozen=True)
class UpdateBatch:
    x: np.ndarray
    y: np.ndarray
    eta: float
    # Optional per-sample scale (feedback gating); None means every sample counts once.
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}.")
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ShapeError(f"x and y must be 2-D, got {self.x.shape} and {self.y.shape}.")
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(
                f"x has {self.x.shape[0]} samples but y has {self.y.shape[0]}."
            )
        if self.weights is not None and self.weights.shape != (self.x.shape[0],):
            raise ShapeError(f"sample weights must have shape ({self.x.shape[0]},).")

    @property
    def size(self):
        return self.x.shape[0]


def _validate(batch, w, debug):
    if w.shape != (batch.x.shape[1], batch.y.shape[1]):
        raise ShapeError(
            f"weights {w.shape} do not match fan_in={batch.x.shape[1]}, fan_out={batch.y.shape[1]}."
        )
    if not (np.all(np.isfinite(batch.x)) and np.all(np.isfinite(batch.y))):
        raise NonFiniteError("update batch contains non-finite values.")
    if debug:
        expected = matmul(batch.x, w)
        if not np.allclose(expected, batch.y, rtol=1e-4, atol=1e-5):
            raise ValueError("y does not equal x @ w for the supplied weights.")


def _weighted(batch, y):
    if batch.weights is None:
        return y
    return y * batch.weights[:, None]


def competitive_delta(batch, w, debug=False):
    """
    Batch-mean update of the local competitive rule; ``w`` is not modified.

    Computed as ``eta * R^T Y / B`` with the residual ``R = X - Y w^T`` whose
    entry ``(b, i)`` is ``x_i - sum_k y_k w_ik`` for sample ``b``.
    """
    w = np.asarray(w)
    _validate(batch, w, debug)
    residual = batch.x - matmul(batch.y, w.T)
    delta = matmul(residual.T, _weighted(batch, batch.y))
    return (delta * (batch.eta / batch.size)).astype(FLOAT, copy=False)


def oja_delta(batch, w, debug=False):
    """Batch-mean Oja update ``eta * y_j (x_i - y_j w_ij)``; neurons do not compete."""
    w = np.asarray(w)
    _validate(batch, w, debug)
    y = np.asarray(batch.y, dtype=ACCUMULATOR)
    x = np.asarray(batch.x, dtype=ACCUMULATOR)
    scaled = _weighted(batch, y)
    hebbian = x.T @ scaled
    decay = w.astype(ACCUMULATOR) * np.sum(scaled * y, axis=0)[None, :]
    return ((hebbian - decay) * (batch.eta / batch.size)).astype(FLOAT, copy=False)


@dataclass(frozen=True)
class StabilityReport:
    residual: float
    weight_norm_sq: float
    span_coeffs: np.ndarray
    column_norm_defect: float

    def is_converged(self, w_norm=None, tolerance=CONVERGENCE_TOLERANCE):
        if w_norm is None:
            w_norm = np.sqrt(self.weight_norm_sq)
        return self.residual <= tolerance * w_norm


def stability_residual(w, c):
    w = np.asarray(w, dtype=ACCUMULATOR)
    c = np.asarray(c, dtype=ACCUMULATOR)
    cw = c @ w
    return float(np.linalg.norm(cw - w @ (w.T @ cw)))


def stability_report(w, c, m=None):
    """How far ``w`` is from a stable solution of ``C w = w w^T C w``."""
    w = np.asarray(w, dtype=ACCUMULATOR)
    if m is None:
        m = w.shape[1]
    if m != w.shape[1]:
        raise ShapeError(f"m={m} must equal the number of neurons ({w.shape[1]}).")
    pairs = top_eigenpairs(c, m)
    basis = np.stack([p.vector for p in pairs], axis=1)
    # span_coeffs[j, k] is the coordinate of neuron j's weights along eigenvector k.
    span = w.T @ basis
    defect = float(np.max(np.abs(np.sum(span ** 2, axis=0) - 1.0))) if m else 0.0
    return StabilityReport(
        residual=stability_residual(w, c),
        weight_norm_sq=float(np.sum(w ** 2)),
        span_coeffs=span,
        column_norm_defect=defect,
    )


def activation_bound_fraction(w, samples, slack=0.02):
    """Fraction of samples with ``||w^T x||^2 <= ||x||^2 (1 + slack)``."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    y = x @ np.asarray(w, dtype=ACCUMULATOR)
    inside = np.sum(y ** 2, axis=1) <= np.sum(x ** 2, axis=1) * (1.0 + slack)
    return float(np.mean(inside))


def typicality_bound_fraction(w, samples, basis, slack=0.02):
    """Fraction of samples with ``||y||^2 <= ||x||^2 - d^2(x, V) + slack ||x||^2``."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    b = np.asarray(basis, dtype=ACCUMULATOR)
    y = x @ np.asarray(w, dtype=ACCUMULATOR)
    strength = np.sum(x ** 2, axis=1)
    dist_sq = np.sum((x - (x @ b) @ b.T) ** 2, axis=1)
    inside = np.sum(y ** 2, axis=1) <= strength - dist_sq + slack * strength
    return float(np.mean(inside))
