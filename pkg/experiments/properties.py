"""
Self-check of the local competitive rule on synthetic Gaussian data.

A layer narrower than its input is trained full-batch until it settles; the
converged weights are then checked against the eigen-decomposition of the
data: reconstruction error keeps falling, it matches principal component
analysis, the squared weight norm approaches the number of neurons, the
output activation stays under the input strength, and it is reduced by the
distance to the principal subspace.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from core.numerics import (
    covariance,
    make_rng,
    pca_reconstruction_error,
    principal_basis,
    reconstruction_error,
    top_eigenpairs,
)
from core.rule import (
    UpdateBatch,
    activation_bound_fraction,
    competitive_delta,
    oja_delta,
    stability_report,
    typicality_bound_fraction,
)

logger = logging.getLogger(__name__)

BURN_IN_FRACTION = 0.1
DESCENT_BAND = 0.01
PCA_TOLERANCE = 0.05
NORM_TOLERANCE = 0.02
BOUND_FRACTION = 0.99
RECOVERY_COSINE = 0.999


@dataclass(frozen=True)
class SyntheticProblem:
    name: str
    spectrum: tuple
    neurons: int
    samples: int = 2000
    held_out: int = 1000
    eta: float = 0.05
    iterations: int = 2000

    @property
    def dimension(self):
        return len(self.spectrum)


DEFAULT_PROBLEMS = (
    SyntheticProblem("gauss16", (4.0, 3.0, 2.0, 1.5) + (0.1,) * 12, neurons=4),
    SyntheticProblem(
        "gauss64", (4.0, 3.0, 2.0, 1.5, 1.2, 1.0, 0.9, 0.8) + (0.1,) * 56, neurons=8, samples=4000
    ),
)
RECOVERY_PROBLEM = SyntheticProblem("anisotropic3", (4.0, 1.0, 0.25), neurons=1, iterations=3000)


@dataclass
class PropertyCheck:
    problem: str
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class PropertyReport:
    seed: int
    rule: str
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def failed(self):
        return [check for check in self.checks if not check.passed]

    def as_dict(self):
        return {
            "seed": self.seed,
            "rule": self.rule,
            "passed": self.passed,
            "checks": [asdict(check) for check in self.checks],
        }


def sign_flipped_delta(batch, w):
    """The competitive rule with its competition term added instead of subtracted."""
    x = np.asarray(batch.x, dtype=np.float64)
    y = np.asarray(batch.y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return batch.eta * (x.T @ y + w @ (y.T @ y)) / batch.size


RULES = {
    "competitive": competitive_delta,
    "sign_flipped": sign_flipped_delta,
}


def gaussian_samples(spectrum, count, rng, basis=None):
    """Zero-mean Gaussian rows whose second moment has eigenvalues ``spectrum``."""
    dim = len(spectrum)
    if basis is None:
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    z = rng.normal(size=(count, dim)) * np.sqrt(np.asarray(spectrum, dtype=np.float64))
    return z @ basis.T, basis


def train_full_batch(samples, w, eta, iterations, delta_fn=competitive_delta):
    """
    Apply ``delta_fn`` on the whole sample set ``iterations`` times.

    Returns the final weights and the reconstruction error after every
    iteration. Training stops early once the weights stop being finite.
    """
    w = np.array(w, dtype=np.float64)
    errors = []
    for _ in range(iterations):
        with np.errstate(over="ignore", invalid="ignore"):
            y = samples @ w
            if not np.all(np.isfinite(y)):
                break
            delta = np.asarray(delta_fn(UpdateBatch(samples, y, eta), w), dtype=np.float64)
            if not np.all(np.isfinite(delta)):
                break
            updated = w + delta
        if not np.all(np.isfinite(updated)):
            break
        w = updated
        with np.errstate(over="ignore", invalid="ignore"):
            errors.append(reconstruction_error(samples, w))
    return w, errors


def _descent_excess(errors):
    """Largest relative rise of the error over its running minimum after burn-in."""
    start = int(len(errors) * BURN_IN_FRACTION)
    tail = np.asarray(errors[start:], dtype=np.float64)
    if tail.size == 0 or not np.all(np.isfinite(tail)):
        return float("inf")
    running = np.minimum.accumulate(tail)
    return float(np.max(tail / running - 1.0))


def _check(report, problem, name, value, threshold, at_least=False):
    value = float(value)
    finite = np.isfinite(value)
    passed = bool(finite and (value >= threshold if at_least else value <= threshold))
    report.checks.append(PropertyCheck(problem, name, value, threshold, passed))


def check_problem(problem, rng, report, delta_fn):
    train, basis = gaussian_samples(problem.spectrum, problem.samples, rng)
    held_out, _ = gaussian_samples(problem.spectrum, problem.held_out, rng, basis=basis)
    w0 = rng.normal(0.0, 0.1, size=(problem.dimension, problem.neurons))
    w, errors = train_full_batch(train, w0, problem.eta, problem.iterations, delta_fn)
    m = problem.neurons
    logger.info("%s: trained %d iterations with %d neurons", problem.name, len(errors), m)

    _check(report, problem.name, "reconstruction_descent", _descent_excess(errors), DESCENT_BAND)

    with np.errstate(over="ignore", invalid="ignore"):
        oracle = pca_reconstruction_error(train, m)
        achieved = reconstruction_error(train, w)
        _check(report, problem.name, "pca_equivalence", abs(achieved - oracle) / oracle, PCA_TOLERANCE)

        stability = stability_report(w, covariance(train), m)
        _check(report, problem.name, "norm_convergence", abs(stability.weight_norm_sq - m) / m, NORM_TOLERANCE)
        w_norm = np.sqrt(stability.weight_norm_sq)
        _check(report, problem.name, "stability_residual", stability.residual / w_norm, 1e-3)

        _check(
            report, problem.name, "activation_bound",
            activation_bound_fraction(w, held_out), BOUND_FRACTION, at_least=True,
        )
        typical = principal_basis(train, m)
        _check(
            report, problem.name, "typicality_bound",
            typicality_bound_fraction(w, held_out, typical), BOUND_FRACTION, at_least=True,
        )


def check_recovery(problem, rng, report):
    samples, _ = gaussian_samples(problem.spectrum, problem.samples, rng)
    w0 = rng.normal(0.0, 0.1, size=(problem.dimension, 1))
    w, _ = train_full_batch(samples, w0, problem.eta, problem.iterations, delta_fn=oja_delta)
    top = top_eigenpairs(covariance(samples), 1)[0].vector
    cosine = abs(float(w[:, 0] @ top)) / float(np.linalg.norm(w[:, 0]))
    _check(report, problem.name, "eigenvector_recovery", cosine, RECOVERY_COSINE, at_least=True)


def run_property_suite(seed=0, rule="competitive", problems=DEFAULT_PROBLEMS):
    """
    Train on every synthetic problem and check the rule's convergence properties.

    Failures are reported in the result, never raised.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; choose from {sorted(RULES)}.")
    rng = make_rng(seed)
    report = PropertyReport(seed=seed, rule=rule)
    for problem in problems:
        check_problem(problem, rng, report, RULES[rule])
    check_recovery(RECOVERY_PROBLEM, rng, report)
    for check in report.failed():
        logger.warning("%s failed %s: %.6g vs %.6g", check.problem, check.name, check.value, check.threshold)
    logger.info("Property suite (seed %d, %s rule): %s", seed, rule, "passed" if report.passed else "FAILED")
    return report
