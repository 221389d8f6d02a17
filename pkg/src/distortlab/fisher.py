"""Matrix-free Fisher operator and extremal eigen-distortion synthesis.

Under additive white Gaussian response noise the Fisher information matrix
of a deterministic differentiable model reduces to the Jacobian Gram
matrix J^T J, which is far too large to store for images but cheap to
apply: one forward-mode and one reverse-mode sweep.  Power iteration on
that operator yields the maximal eigenpair; a second iteration on the
spectrally shifted operator J^T J - lambda_max I (whose spectrum is
non-positive, with the formerly smallest eigenvalue now dominant in
magnitude) yields the minimal pair as lambda_max - ||shifted iterate||.

Eigenvalue convergence is declared when the relative change of the
iterate magnitude drops below ``tol``; the returned eigenvalue is
recomputed from the final vector, and a Rayleigh-quotient cross check is
logged in the telemetry.  Vectors carry a fixed sign convention (the
largest-magnitude component is made positive) so outputs are reproducible
byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RankZeroSignal, ShapeError
from .grids import as_grid2, dot, l2_norm, normalize
from .noise import NoiseStream
from .stages import ModelChain, default_fd_step, dense_jacobian_fd

__all__ = [
    "FimOperator",
    "IterationStats",
    "EigenResult",
    "SynthesisConfig",
    "power_iterate",
    "deflated_iterate",
    "synthesize",
    "predicted_log_threshold_ratio",
    "dense_fim_matrix",
    "dense_eigenpairs",
    "apply_sign_convention",
]


class FimOperator:
    """Applies J[x]^T J[x] to image-shaped vectors without forming it.

    The chain derivative is linearized once at the base image, so each
    application is one cached tangent sweep plus one cached adjoint sweep.
    """

    def __init__(self, chain: ModelChain, image):
        self.chain = chain
        self.image = as_grid2(image, "image")
        if self.image.shape != chain.image_shape:
            raise ShapeError(
                f"image shape {self.image.shape} != model input {chain.image_shape}"
            )
        self._lin = chain.linearize(self.image)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.image.shape:
            raise ShapeError(f"vector shape {v.shape} != image {self.image.shape}")
        return self._lin.vjp(self._lin.jvp(v))


@dataclass
class IterationStats:
    iterations: int
    converged: bool
    residual: float
    rayleigh: float


@dataclass
class EigenResult:
    """Extremal eigenpairs of the Fisher operator with telemetry."""

    lambda_max: float
    lambda_min: float
    e_max: np.ndarray
    e_min: np.ndarray
    stats_max: IterationStats
    stats_min: IterationStats
    seed: int
    degenerate_spectrum: bool = False
    rank_deficient: bool = False

    @property
    def converged(self) -> bool:
        return self.stats_max.converged and self.stats_min.converged

    def to_json_dict(self) -> dict:
        return {
            "lambda_max": self.lambda_max,
            "lambda_min": self.lambda_min,
            "iterations": {"max": self.stats_max.iterations, "min": self.stats_min.iterations},
            "residuals": {"max": self.stats_max.residual, "min": self.stats_min.residual},
            "rayleigh": {"max": self.stats_max.rayleigh, "min": self.stats_min.rayleigh},
            "converged": {"max": self.stats_max.converged, "min": self.stats_min.converged},
            "seed": self.seed,
            "flags": {
                "degenerate_spectrum": self.degenerate_spectrum,
                "rank_deficient": self.rank_deficient,
            },
        }


@dataclass(frozen=True)
class SynthesisConfig:
    """Seed and stopping controls for the two eigen-iterations.

    ``rank_tol`` sets the blindness flag threshold (lambda_min below
    rank_tol * lambda_max marks the result rank deficient); it defaults to
    ``tol``, but tight iteration tolerances warrant a separate, looser
    flag level.
    """

    seed: int = 0
    tol: float = 1e-6
    max_iters: int = 10000
    rank_tol: float | None = None

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rank_tol is not None and self.rank_tol <= 0.0:
            raise ParameterError(f"rank_tol must be positive, got {self.rank_tol}")

    @property
    def effective_rank_tol(self) -> float:
        return self.tol if self.rank_tol is None else self.rank_tol


def apply_sign_convention(v: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude component is positive."""
    flat = v.ravel()
    idx = int(np.argmax(np.abs(flat)))
    return -v if flat[idx] < 0.0 else v


def _seed_vector(op: FimOperator, stream: NoiseStream) -> np.ndarray:
    return normalize(stream.normal_grid(op.image.shape))


def power_iterate(op: FimOperator, stream: NoiseStream, tol: float, max_iters: int):
    """Dominant eigenpair of the Fisher operator from a white-noise start.

    Returns (lambda_max, e_max, stats).  The loop stops when the iterate
    magnitude changes by less than ``tol`` relatively, or at ``max_iters``
    (flagged in stats, not an error).
    """
    v = _seed_vector(op, stream)
    lam_prev = None
    converged = False
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        w = op.apply(v)
        lam = l2_norm(w)
        if lam == 0.0:
            raise RankZeroSignal("Fisher operator annihilated the iterate (model constant near x)")
        v = w / lam
        if lam_prev is not None and abs(lam - lam_prev) <= tol * lam:
            converged = True
            break
        lam_prev = lam
    w = op.apply(v)
    lam = l2_norm(w)
    residual = l2_norm(w - lam * v)
    rayleigh = dot(v, w)
    return lam, apply_sign_convention(v), IterationStats(iterations, converged, residual, rayleigh)


def deflated_iterate(op: FimOperator, lambda_max: float, stream: NoiseStream, tol: float, max_iters: int, rank_tol: float | None = None):
    """Minimal eigenpair via iteration with the shifted operator J^T J - lambda_max I.

    Returns (lambda_min, e_min, stats, degenerate, rank_deficient).  If the
    first iterate is annihilated by the shift (magnitude <= tol*lambda_max)
    the spectrum is treated as degenerate: every direction is an
    eigenvector and the start vector is returned with lambda_min =
    lambda_max.
    """
    v = _seed_vector(op, stream)

    def shifted(u):
        return op.apply(u) - lambda_max * u

    w = shifted(v)
    mu = l2_norm(w)
    if mu <= tol * lambda_max:
        stats = IterationStats(1, True, mu, dot(v, op.apply(v)))
        return lambda_max, apply_sign_convention(v), stats, True, False

    mu_prev = None
    converged = False
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        w = shifted(v)
        mu = l2_norm(w)
        if mu == 0.0:
            # exact degeneracy encountered mid-flight
            stats = IterationStats(iterations, True, 0.0, dot(v, op.apply(v)))
            return lambda_max, apply_sign_convention(v), stats, True, False
        v = w / mu
        if mu_prev is not None and abs(mu - mu_prev) <= tol * mu:
            converged = True
            break
        mu_prev = mu
    w = shifted(v)
    mu = l2_norm(w)
    lambda_min = max(lambda_max - mu, 0.0)
    residual = l2_norm(w + mu * v)  # shifted eigenvalue is -mu
    rayleigh = dot(v, op.apply(v))
    rank_deficient = lambda_min < (tol if rank_tol is None else rank_tol) * lambda_max
    stats = IterationStats(iterations, converged, residual, rayleigh)
    return lambda_min, apply_sign_convention(v), stats, False, rank_deficient


def synthesize(chain: ModelChain, image, config: SynthesisConfig) -> EigenResult:
    """Run both iterations and collect the full eigen-distortion record."""
    op = FimOperator(chain, image)
    root = NoiseStream(config.seed)
    lam_max, e_max, stats_max = power_iterate(
        op, root.substream(1), config.tol, config.max_iters
    )
    lam_min, e_min, stats_min, degenerate, rank_deficient = deflated_iterate(
        op, lam_max, root.substream(2), config.tol, config.max_iters,
        rank_tol=config.effective_rank_tol,
    )
    return EigenResult(
        lambda_max=lam_max,
        lambda_min=lam_min,
        e_max=e_max,
        e_min=e_min,
        stats_max=stats_max,
        stats_min=stats_min,
        seed=config.seed,
        degenerate_spectrum=degenerate,
        rank_deficient=rank_deficient,
    )


def predicted_log_threshold_ratio(result: EigenResult) -> float:
    """Half the log eigenvalue ratio; +inf when the model is rank deficient.

    The in-memory value may be ``math.inf``; serialized reports must write
    the string marker instead (see cli module).
    """
    if result.degenerate_spectrum:
        return 0.0
    if result.rank_deficient or result.lambda_min <= 0.0:
        return math.inf
    return 0.5 * math.log(result.lambda_max / result.lambda_min)


def dense_fim_matrix(chain: ModelChain, image, h: float | None = None) -> np.ndarray:
    """Dense J^T J from the finite-difference Jacobian (oracle path)."""
    image = as_grid2(image, "image")
    jac = dense_jacobian_fd(chain, image, h if h is not None else default_fd_step(image))
    return jac.T @ jac


def dense_eigenpairs(chain: ModelChain, image, h: float | None = None):
    """Extremal eigenpairs of the dense finite-difference Gram matrix.

    Fully independent of jvp/vjp and of the power iteration: finite
    differences build the Jacobian and a dense symmetric eigendecomposition
    extracts the spectrum.
    """
    image = as_grid2(image, "image")
    gram = dense_fim_matrix(chain, image, h)
    evals, evecs = np.linalg.eigh(gram)
    e_min = apply_sign_convention(evecs[:, 0].reshape(image.shape))
    e_max = apply_sign_convention(evecs[:, -1].reshape(image.shape))
    return {
        "lambda_max": float(evals[-1]),
        "lambda_min": float(max(evals[0], 0.0)),
        "e_max": e_max,
        "e_min": e_min,
        "eigenvalues": evals,
    }
