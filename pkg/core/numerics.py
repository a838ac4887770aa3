"""
Dense linear-algebra kernels and numerical oracles.

Model state is stored as 32-bit floats; every reduction here accumulates in
64-bit. Matrices are plain 2-D ``numpy`` arrays, one sample per row.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import (
    AsymmetricMatrixError,
    EmptySampleError,
    NonFiniteError,
    ShapeError,
)

logger = logging.getLogger(__name__)

FLOAT = np.float32
ACCUMULATOR = np.float64
DEFAULT_FD_STEP = 1e-3
SYMMETRY_TOLERANCE = 1e-5


def as_matrix(a, name="matrix", dtype=FLOAT):
    """Return ``a`` as a finite 2-D array of ``dtype``."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}.")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries.")
    return arr


def result_dtype(*arrays):
    # float64 operands (oracles, gradient checks) stay float64; everything else is model precision.
    if any(np.asarray(a).dtype == np.float64 for a in arrays):
        return np.float64
    return FLOAT


def matmul(a, b):
    """Standard product ``a @ b`` with 64-bit accumulation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}.")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})."
        )
    out = np.matmul(a.astype(ACCUMULATOR, copy=False), b.astype(ACCUMULATOR, copy=False))
    return out.astype(result_dtype(a, b), copy=False)


def covariance(samples):
    """Uncentered second moment ``C = (1/N) sum x x^T`` of the sample rows."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    if x.ndim != 2:
        raise ShapeError(f"samples must be 2-D (one sample per row), got {x.shape}.")
    if x.shape[0] == 0:
        raise EmptySampleError("covariance needs at least one sample row.")
    c = x.T @ x / x.shape[0]
    return (c + c.T) / 2.0


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


def check_symmetric(c, tolerance=SYMMETRY_TOLERANCE):
    c = np.asarray(c, dtype=ACCUMULATOR)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {c.shape}.")
    if not np.all(np.isfinite(c)):
        raise NonFiniteError("matrix contains non-finite entries.")
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    asymmetry = float(np.abs(c - c.T).max(initial=0.0))
    if asymmetry > tolerance * scale:
        raise AsymmetricMatrixError(
            f"matrix is not symmetric: max |c - c^T| = {asymmetry:.3e}."
        )
    return (c + c.T) / 2.0


def jacobi_eigh(c, tolerance=1e-12, max_sweeps=100):
    """
    Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` sorted by descending value; eigenvectors are
    the columns of ``vectors``.
    """
    a = check_symmetric(c).copy()
    n = a.shape[0]
    v = np.eye(n, dtype=ACCUMULATOR)
    scale = max(float(np.linalg.norm(a)), np.finfo(ACCUMULATOR).tiny)

    for sweep in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.tril(a, -1) ** 2)))
        if off <= tolerance * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tolerance * scale * 1e-3:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                cos = 1.0 / np.sqrt(t * t + 1.0)
                sin = t * cos

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = cos * col_p - sin * col_q
                a[:, q] = sin * col_p + cos * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = cos * row_p - sin * row_q
                a[q, :] = sin * row_p + cos * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = cos * vec_p - sin * vec_q
                v[:, q] = sin * vec_p + cos * vec_q
    else:
        logger.warning("Jacobi eigensolver hit %d sweeps without converging", max_sweeps)

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def top_eigenpairs(c, m):
    """Top ``m`` eigenpairs of a symmetric PSD matrix, descending by value."""
    c = np.asarray(c)
    if m < 0 or (c.ndim == 2 and m > c.shape[0]):
        raise ShapeError(f"cannot take {m} eigenpairs of a {c.shape} matrix.")
    values, vectors = jacobi_eigh(c)
    pairs = []
    for k in range(m):
        vec = vectors[:, k]
        vec = vec / np.linalg.norm(vec)
        pairs.append(EigenPair(value=float(values[k]), vector=vec))
    return pairs


def principal_basis(samples, m):
    """Columns are the top-``m`` eigenvectors of ``E{x x^T}``."""
    pairs = top_eigenpairs(covariance(samples), m)
    dim = np.asarray(samples).shape[1]
    if not pairs:
        return np.zeros((dim, 0), dtype=ACCUMULATOR)
    return np.stack([p.vector for p in pairs], axis=1)


def reconstruction_error(samples, w):
    """Mean ``||x - w w^T x||^2`` over the sample rows."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    w = np.asarray(w, dtype=ACCUMULATOR)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"samples have dimension {x.shape[1]}, weights expect {w.shape[0]}.")
    residual = x - (x @ w) @ w.T
    return float(np.mean(np.sum(residual ** 2, axis=1)))


def pca_reconstruction_error(samples, m):
    """Reconstruction error of the top-``m`` principal subspace, the best any m-neuron layer can reach."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    if m > x.shape[1]:
        raise ShapeError(f"m={m} exceeds input dimension {x.shape[1]}.")
    return reconstruction_error(x, principal_basis(x, m))


def distance_to_subspace(samples, basis):
    """Euclidean distance of each sample row to span(basis columns), basis orthonormal."""
    x = np.asarray(samples, dtype=ACCUMULATOR)
    b = np.asarray(basis, dtype=ACCUMULATOR)
    residual = x - (x @ b) @ b.T
    return np.sqrt(np.sum(residual ** 2, axis=1))


def finite_diff_gradient(f, x, h=DEFAULT_FD_STEP):
    """Central-difference gradient of the scalar field ``f`` at ``x``."""
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}.")
    x = np.asarray(x, dtype=ACCUMULATOR)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        step = np.zeros(x.size, dtype=ACCUMULATOR)
        step[i] = h
        step = step.reshape(x.shape)
        upper = float(f(x + step))
        lower = float(f(x - step))
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError(f"f is non-finite around coordinate {i}.")
        flat[i] = (upper - lower) / (2.0 * h)
    return grad


def make_rng(seed):
    """
    Seeded generator used everywhere randomness is needed.

    The bit generator is PCG64 (numpy's default), whose stream for a given
    seed is identical across platforms.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))
