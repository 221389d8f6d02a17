"""Fitting model parameters to distortion ratings.

The objective is the Pearson correlation between model perceptual distance
``||f(x) - f(x')||`` and the (distortion-increasing) scores, maximized by
stochastic gradient ascent with Adam on the unconstrained parameter
vector.  The per-record distance gradients flow through both forward
passes via the chain's parameter adjoint, then through the constrain
transform.

Multi-stage weighted metrics are fit separately by non-negative least
squares (Lawson-Hanson active set), matching how stage weights of a fixed
feature hierarchy are usually calibrated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorrelationError, NumericsError, ParameterError, ShapeError
from .grids import as_grid2, l2_norm
from .noise import NoiseStream
from .stages import ModelChain
from .zoo import CNN_CONV_WEIGHT_COUNT, ModelFamily, get_family, softplus_inverse

__all__ = [
    "TrainConfig",
    "AdamState",
    "perceptual_distance",
    "pearson",
    "objective_and_gradient",
    "adam_step",
    "train",
    "TrainResult",
    "nnls",
    "fit_stage_weights_nnls",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    holdout_fraction: float = 0.2
    update_bn_stats: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.eps_adam <= 0:
            raise ParameterError("learning_rate and eps_adam must be positive")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ParameterError(
                f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}"
            )
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def perceptual_distance(chain: ModelChain, x, x_prime) -> float:
    """Euclidean distance between model responses to the two images."""
    x = as_grid2(x, "x")
    x_prime = as_grid2(x_prime, "x_prime")
    if x.shape != x_prime.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {x_prime.shape}")
    return l2_norm(chain.forward(x) - chain.forward(x_prime))


def pearson(a, b) -> float:
    """Centered correlation of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"pearson expects equal-length vectors, got {a.shape}, {b.shape}")
    if a.size < 3:
        raise CorrelationError(f"need at least 3 points, got {a.size}")
    ac = a - a.mean()
    bc = b - b.mean()
    na = l2_norm(ac)
    nb = l2_norm(bc)
    if na == 0.0 or nb == 0.0:
        raise CorrelationError("correlation undefined: zero variance")
    return float(np.dot(ac, bc) / (na * nb))


def _distances_and_param_grads(chain: ModelChain, records, want_grads: bool):
    dists = np.empty(len(records))
    grads = [] if want_grads else None
    for idx, rec in enumerate(records):
        ra = chain.forward(rec.reference)
        rb = chain.forward(rec.distorted)
        diff = ra - rb
        d = l2_norm(diff)
        dists[idx] = d
        if want_grads:
            if d == 0.0:
                grads.append(np.zeros(chain.param_count))
                continue
            cot = diff / d
            ga = chain.param_vjp(rec.reference, cot)
            gb = chain.param_vjp(rec.distorted, cot)
            g = ga - gb
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite distance gradient at record {idx}")
            grads.append(g)
    return dists, grads


def objective_and_gradient(family: ModelFamily, theta, records, image_shape, weight_decay: float = 0.0):
    """Pearson objective and its ascent gradient in theta.

    The returned scalar is the raw correlation; the gradient additionally
    carries the ``-weight_decay * theta`` regularizer term.
    """
    if len(records) < 3:
        raise ParameterError(f"batch must have >= 3 records, got {len(records)}")
    theta = np.asarray(theta, dtype=np.float64)
    chain = family.build_theta(theta, image_shape)
    scores = np.asarray([r.score for r in records], dtype=np.float64)
    dists, dgrads = _distances_and_param_grads(chain, records, want_grads=True)
    rho = pearson(dists, scores)

    dc = dists - dists.mean()
    sc = scores - scores.mean()
    ndc, nsc = l2_norm(dc), l2_norm(sc)
    # d rho / d D_i for centered data; the centering projector is absorbed
    # because both factors are already centered.
    drho_dd = sc / (ndc * nsc) - rho * dc / (ndc * ndc)

    pgrad = np.zeros(chain.param_count)
    for w, g in zip(drho_dd, dgrads):
        pgrad += w * g
    grad = family.theta_grad(theta, pgrad)
    if weight_decay:
        grad = grad - weight_decay * theta
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite objective gradient")
    return rho, grad


def adam_step(state: AdamState, theta, gradient, config: TrainConfig):
    """One bias-corrected Adam ascent update; returns (state', theta')."""
    theta = np.asarray(theta, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if theta.shape != gradient.shape or theta.shape != state.m.shape:
        raise ShapeError("adam_step: shape mismatch between theta, gradient, state")
    t = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * gradient
    v = config.beta2 * state.v + (1.0 - config.beta2) * gradient * gradient
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    theta_new = theta + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_adam)
    return AdamState(m=m, v=v, step=t), theta_new


def _evaluate_rho(family, theta, records, image_shape):
    chain = family.build_theta(theta, image_shape)
    scores = np.asarray([r.score for r in records], dtype=np.float64)
    dists, _ = _distances_and_param_grads(chain, records, want_grads=False)
    return pearson(dists, scores)


def _refresh_cnn_divisors(family, theta, records, image_shape):
    """Recompute per-layer response stds on the given records.

    Divisor slots live at the tail of the cnn theta; they are batch
    statistics (std over records, channels and positions of each layer's
    pre-normalization response), treated as constants by the gradient.
    """
    chain = family.build_theta(theta, image_shape)
    sums = np.zeros(4)
    counts = np.zeros(4)
    for rec in records:
        for img in (rec.reference, rec.distorted):
            acts = chain.forward_all(img)
            # conv outputs sit at stage outputs 1, 4, 7, 10 (1-based acts index)
            for layer in range(4):
                pre = acts[1 + 3 * layer]
                sums[layer] += float(np.sum(pre * pre))
                counts[layer] += pre.size
    stds = np.sqrt(sums / counts)
    stds = np.maximum(stds, 1e-6)
    out = theta.copy()
    out[CNN_CONV_WEIGHT_COUNT:] = softplus_inverse(stds)
    return out


@dataclass
class TrainResult:
    theta: np.ndarray
    log: list
    best_epoch: int
    best_rho: float


def train(model_type: str, records, config: TrainConfig, image_shape=None, initial_theta=None) -> TrainResult:
    """Fit a model family to a dataset; returns best-holdout parameters.

    The holdout split is fixed before training from the config seed; each
    epoch reshuffles the training records with its own derived stream, so a
    given (seed, config, data) triple always produces the identical log.
    """
    records = list(records)
    if len(records) < 10:
        raise ParameterError(f"training needs >= 10 records, got {len(records)}")
    family = get_family(model_type)
    if image_shape is None:
        image_shape = records[0].reference.shape

    root = NoiseStream(config.seed)
    order = root.substream(0).permutation(len(records))
    n_holdout = int(round(config.holdout_fraction * len(records)))
    holdout = [records[i] for i in order[:n_holdout]]
    train_set = [records[i] for i in order[n_holdout:]]
    if len(train_set) < 3:
        raise ParameterError("holdout fraction leaves fewer than 3 training records")

    theta = np.asarray(
        family.default_theta() if initial_theta is None else initial_theta,
        dtype=np.float64,
    ).copy()
    state = AdamState.zeros(theta.size)
    log = []
    best_rho = -np.inf
    best_theta = theta.copy()
    best_epoch = -1

    for epoch in range(config.epochs):
        if family.trainable_count > 0:
            perm = root.substream(1, epoch).permutation(len(train_set))
            for start in range(0, len(train_set), config.batch_size):
                batch = [train_set[i] for i in perm[start : start + config.batch_size]]
                if len(batch) < 3:
                    continue
                if family.name == "cnn" and config.update_bn_stats:
                    theta = _refresh_cnn_divisors(family, theta, batch, image_shape)
                _, grad = objective_and_gradient(
                    family, theta, batch, image_shape, weight_decay=config.weight_decay
                )
                state, theta = adam_step(state, theta, grad, config)
        rho_train = _evaluate_rho(family, theta, train_set, image_shape)
        rho_holdout = (
            _evaluate_rho(family, theta, holdout, image_shape) if len(holdout) >= 3 else None
        )
        log.append({"epoch": epoch, "rho_train": rho_train, "rho_holdout": rho_holdout})
        tracked = rho_holdout if rho_holdout is not None else rho_train
        if tracked > best_rho:
            best_rho = tracked
            best_theta = theta.copy()
            best_epoch = epoch

    if family.name == "cnn" and config.update_bn_stats and family.trainable_count > 0:
        best_theta = _refresh_cnn_divisors(family, best_theta, train_set, image_shape)
    return TrainResult(theta=best_theta, log=log, best_epoch=best_epoch, best_rho=best_rho)


def nnls(matrix, target, tol: float | None = None, max_iters: int | None = None):
    """Non-negative least squares by the Lawson-Hanson active-set method.

    Solves min ||A w - y||_2 subject to w >= 0.  Returns (w, rank_deficient)
    where the flag records that some passive-set subproblem was rank
    deficient and solved in the minimum-norm sense.
    """
    a = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if a.ndim != 2 or y.ndim != 1 or a.shape[0] != y.size:
        raise ShapeError(f"nnls: incompatible shapes {a.shape}, {y.shape}")
    n = a.shape[1]
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.abs(a.T @ y).max(initial=0.0)))
    if max_iters is None:
        max_iters = 30 * n

    w = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # flag degeneracy up front: optimal solutions are then non-unique and
    # least-squares subproblems fall back to their minimum-norm answers
    rank_deficient = bool(np.linalg.matrix_rank(a) < n)

    def solve_passive():
        nonlocal rank_deficient
        cols = np.flatnonzero(passive)
        if cols.size == 0:
            return np.zeros(n)
        sol, _, rank, _ = np.linalg.lstsq(a[:, cols], y, rcond=None)
        if rank < cols.size:
            rank_deficient = True
        z = np.zeros(n)
        z[cols] = sol
        return z

    grad = a.T @ (y - a @ w)
    for _ in range(max_iters):
        candidates = np.where(passive, -np.inf, grad)
        best = int(np.argmax(candidates))
        if not np.isfinite(candidates[best]) or candidates[best] <= tol:
            break  # KKT satisfied: all free-variable gradients non-positive
        passive[best] = True
        z = solve_passive()
        inner = 0
        while np.any(passive & (z <= 0.0)) and inner < max_iters:
            inner += 1
            blocking = passive & (z <= 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios = w[blocking] / (w[blocking] - z[blocking])
            alpha = float(np.nan_to_num(ratios, nan=0.0).min())
            w = w + alpha * (z - w)
            passive &= w > 0.0
            w[~passive] = 0.0
            z = solve_passive()
        w = np.maximum(z, 0.0)
        grad = a.T @ (y - a @ w)
    return w, rank_deficient


def fit_stage_weights_nnls(chain: ModelChain, records):
    """Non-negative stage weights for a multi-stage distance metric.

    Column s of the design matrix holds the squared per-stage response
    distance of record i at the chain's tap stages; the weights solve the
    least-squares match to the (distortion-increasing) scores.
    """
    records = list(records)
    n_stages = len(chain.tap_indices)
    if len(records) < n_stages:
        raise ParameterError(
            f"need at least {n_stages} records to fit {n_stages} stage weights"
        )
    design = np.empty((len(records), n_stages))
    for i, rec in enumerate(records):
        ra = chain.stage_responses(rec.reference)
        rb = chain.stage_responses(rec.distorted)
        design[i] = [float(np.sum((p - q) ** 2)) for p, q in zip(ra, rb)]
    scores = np.asarray([r.score for r in records], dtype=np.float64)
    return nnls(design, scores)
