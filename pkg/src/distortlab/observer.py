"""Simulated psychophysics: 2AFC trials, psychometric fits, thresholds.

The simulated subject is the ideal observer for the two-interval task
under additive white Gaussian response noise: it projects each interval's
response, taken relative to a noisy internal reference, onto the expected
response-change direction and picks the interval with the larger
projection.  For that observer

    P(correct | amplitude a) = Phi(||f(x + a e) - f(x)|| / (sqrt(2) sigma)),

so the 75%-correct threshold under local linearization is
``sqrt(2) * Phi^-1(0.75) * sigma / ||J e||`` - which is what
:func:`analytic_threshold` returns, and what the Monte Carlo tests verify
rather than assume.  Because the decision statistic depends on the
isotropic noise draws only through their scalar projections onto the
template, trials draw those projections directly; this is an exact
marginalization, not an approximation.

Thresholds are measured by the method of constant stimuli: a log-spaced
amplitude grid auto-centered on the analytic threshold, a fixed trial
budget spread across levels, and a maximum-likelihood cumulative-Gaussian
fit in log amplitude (golden-section search over the slope, grid scan plus
golden refinement over the location).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, ParameterError
from .grids import as_grid2, l2_norm
from .noise import NoiseStream
from .stages import ModelChain

__all__ = [
    "norm_cdf",
    "norm_ppf",
    "ObserverConfig",
    "PsychometricFit",
    "analytic_threshold",
    "simulate_2afc",
    "fit_psychometric",
    "measure_threshold",
    "empirical_D",
    "analytic_D",
]


_ERF = np.vectorize(math.erf, otypes=[np.float64])


def norm_cdf(z):
    """Standard normal CDF via erf."""
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 + _ERF(z / math.sqrt(2.0)))


def norm_ppf(p: float) -> float:
    """Standard normal quantile by bisection on :func:`norm_cdf`."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ParameterError(f"norm_ppf requires p in (0, 1), got {p}")
    lo, hi = -12.0, 12.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ObserverConfig:
    """Noise level, criterion, and trial layout of a simulated experiment."""

    sigma: float
    criterion: float = 0.75
    trials_per_vector: int = 120
    amplitude_levels: int = 9
    amplitude_half_decades: float = 0.5
    max_amplitude: float = 1e3
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0.5 < self.criterion < 1.0:
            raise ParameterError(f"criterion must be in (0.5, 1), got {self.criterion}")
        if self.amplitude_levels < 4:
            raise ParameterError("need at least 4 amplitude levels")
        if self.amplitude_half_decades <= 0.0:
            raise ParameterError("amplitude_half_decades must be positive")
        if self.max_amplitude <= 0.0:
            raise ParameterError("max_amplitude must be positive")


@dataclass
class PsychometricFit:
    """Cumulative-Gaussian fit of proportion correct versus log amplitude."""

    threshold: float
    slope: float
    log_likelihood: float
    converged: bool
    lapse_rate: float = 0.0  # reserved; simulated observers do not lapse

    @property
    def censored(self) -> bool:
        return not math.isfinite(self.threshold)


def analytic_threshold(chain: ModelChain, x, e, config: ObserverConfig) -> float:
    """Ideal-observer threshold under local linearization.

    Returns ``sqrt(2) * Phi^-1(criterion) * sigma / ||J[x] e||``; infinite
    when the model is blind in direction e.
    """
    e = as_grid2(e, "direction")
    n = l2_norm(e)
    if abs(n - 1.0) > 1e-8:
        raise ParameterError(f"direction must be unit norm, got ||e|| = {n}")
    gain = l2_norm(chain.jvp(x, e))
    beta = math.sqrt(2.0) * norm_ppf(config.criterion) * config.sigma
    if gain == 0.0:
        return math.inf
    return beta / gain


def simulate_2afc(
    chain: ModelChain,
    x,
    e,
    alpha: float,
    config: ObserverConfig,
    n_trials: int,
    stream: NoiseStream,
) -> float:
    """Fraction of correct trials at one distortion amplitude.

    Each trial draws the projections of three independent isotropic noise
    vectors (two intervals and the internal reference) onto the template
    ``f(x + alpha e) - f(x)`` and picks the interval farther along it.
    """
    if alpha <= 0.0:
        raise ParameterError(f"amplitude must be positive, got {alpha}")
    x = as_grid2(x, "x")
    e = as_grid2(e, "direction")
    d = l2_norm(chain.forward(x + alpha * e) - chain.forward(x))
    draws = stream.normals(3 * int(n_trials)) * config.sigma
    n0, n1, nref = draws[0::3], draws[1::3], draws[2::3]
    s_clean = n0 - nref
    s_distorted = d + n1 - nref
    return float(np.mean(s_distorted > s_clean))


def _negative_log_likelihood(log_alphas, proportions, counts, m, s):
    """Binomial NLL; ``m`` may be a scalar or a vector of candidate locations."""
    m = np.asarray(m, dtype=np.float64)
    z = (log_alphas[np.newaxis, :] - m.reshape(-1, 1)) / s
    p = 0.5 + 0.5 * norm_cdf(z)
    p = np.clip(p, 1e-9, 1.0 - 1e-9)
    nll = -np.sum(counts * (proportions * np.log(p) + (1.0 - proportions) * np.log(1.0 - p)), axis=1)
    return nll if nll.size > 1 else float(nll[0])


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(fun, lo, hi, iters=48):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def fit_psychometric(alphas, proportions, trial_counts, criterion: float = 0.75) -> PsychometricFit:
    """Maximum-likelihood fit of P(correct) = 0.5 + 0.5 Phi((ln a - m)/s).

    The location is scanned on a grid and polished by golden-section within
    the best cell; the slope is found by golden-section on its log.  The
    returned threshold is the fitted curve's crossing of ``criterion``.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    proportions = np.asarray(proportions, dtype=np.float64)
    counts = np.asarray(trial_counts, dtype=np.float64)
    if alphas.ndim != 1 or alphas.size < 4:
        raise FitError(f"need at least 4 amplitude levels, got {alphas.size}")
    if alphas.shape != proportions.shape or alphas.shape != counts.shape:
        raise FitError("alphas, proportions and trial_counts must align")
    if np.any(alphas <= 0.0) or np.any(np.diff(alphas) <= 0.0):
        raise FitError("amplitudes must be positive and strictly increasing")
    if np.all(proportions < criterion) or np.all(proportions > criterion):
        raise FitError(
            "proportions do not bracket the criterion; amplitude grid misconfigured"
        )

    la = np.log(alphas)
    span = max(float(la[-1] - la[0]), 1.0)
    m_lo, m_hi = float(la[0]) - span, float(la[-1]) + span
    m_grid = np.linspace(m_lo, m_hi, 129)
    cell = m_grid[1] - m_grid[0]

    def best_m_for(s):
        nlls = _negative_log_likelihood(la, proportions, counts, m_grid, s)
        i = int(np.argmin(nlls))
        lo = m_grid[max(i - 1, 0)]
        hi = m_grid[min(i + 1, m_grid.size - 1)]
        m = _golden_min(lambda mm: _negative_log_likelihood(la, proportions, counts, mm, s), lo, hi)
        return m, _negative_log_likelihood(la, proportions, counts, m, s)

    def profiled(log_s):
        return best_m_for(math.exp(log_s))[1]

    log_s = _golden_min(profiled, math.log(0.02), math.log(10.0), iters=40)
    s = math.exp(log_s)
    m, nll = best_m_for(s)
    threshold = math.exp(m + s * norm_ppf(2.0 * criterion - 1.0))
    converged = bool(m_lo + cell < m < m_hi - cell)
    return PsychometricFit(
        threshold=threshold, slope=s, log_likelihood=-nll, converged=converged
    )


def _level_counts(total: int, levels: int) -> np.ndarray:
    base, extra = divmod(int(total), int(levels))
    return np.asarray([base + (1 if i < extra else 0) for i in range(levels)])


def measure_threshold(
    chain: ModelChain, x, e, config: ObserverConfig, stream: NoiseStream | None = None
) -> PsychometricFit:
    """Constant-stimuli threshold measurement against this model-observer.

    The amplitude grid is log-spaced and auto-centered on the analytic
    threshold.  A threshold beyond ``config.max_amplitude`` (the model is
    blind or numerically blind along e; no physically meaningful stimulus
    could reach it) yields a censored fit rather than an error, so callers
    can report it explicitly.
    """
    if stream is None:
        stream = NoiseStream(config.seed)
    center = analytic_threshold(chain, x, e, config)
    if not math.isfinite(center) or center > config.max_amplitude:
        return PsychometricFit(
            threshold=math.inf, slope=math.nan, log_likelihood=math.nan, converged=False
        )
    exponents = np.linspace(
        -config.amplitude_half_decades, config.amplitude_half_decades, config.amplitude_levels
    )
    grid = center * 10.0**exponents
    counts = _level_counts(config.trials_per_vector, config.amplitude_levels)
    proportions = np.empty(config.amplitude_levels)
    for i, (alpha, n) in enumerate(zip(grid, counts)):
        proportions[i] = simulate_2afc(chain, x, e, float(alpha), config, int(n), stream.substream(i))
    return fit_psychometric(grid, proportions, counts, config.criterion)


def empirical_D(pairs, observer_chain: ModelChain, images, config: ObserverConfig, n_subjects: int = 1) -> dict:
    """Mean measured log threshold ratio of least- over most-noticeable
    distortions, averaged over images and simulated subjects.

    ``pairs`` holds one (e_max, e_min) tuple per image, typically another
    model's predictions; thresholds are measured against
    ``observer_chain``.  Censored (infinite-threshold) measurements are
    reported explicitly and excluded from the mean, never dropped silently.
    """
    pairs = list(pairs)
    images = [as_grid2(im, "image") for im in images]
    if len(pairs) != len(images) or not images:
        raise ParameterError("need one (e_max, e_min) pair per image")
    master = NoiseStream(config.seed)
    log_ratios = []
    per_measurement = []
    censored = []
    for i, (image, (e_max, e_min)) in enumerate(zip(images, pairs)):
        for s in range(int(n_subjects)):
            fit_m = measure_threshold(
                observer_chain, image, e_max, config, stream=master.substream(i, s, 0)
            )
            fit_l = measure_threshold(
                observer_chain, image, e_min, config, stream=master.substream(i, s, 1)
            )
            entry = {
                "image": i,
                "subject": s,
                "threshold_max": fit_m.threshold,
                "threshold_min": fit_l.threshold,
            }
            per_measurement.append(entry)
            if fit_m.censored or fit_l.censored:
                censored.append(entry)
                continue
            log_ratios.append(math.log(fit_l.threshold / fit_m.threshold))
    return {
        "D": float(np.mean(log_ratios)) if log_ratios else math.nan,
        "log_ratios": log_ratios,
        "measurements": per_measurement,
        "censored": censored,
        "n_images": len(images),
        "n_subjects": int(n_subjects),
    }


def analytic_D(pairs, observer_chain: ModelChain, images, config: ObserverConfig) -> dict:
    """Noise-free counterpart of :func:`empirical_D` using analytic thresholds."""
    pairs = list(pairs)
    images = [as_grid2(im, "image") for im in images]
    log_ratios = []
    censored = []
    for i, (image, (e_max, e_min)) in enumerate(zip(images, pairs)):
        t_m = analytic_threshold(observer_chain, image, e_max, config)
        t_l = analytic_threshold(observer_chain, image, e_min, config)
        if not (math.isfinite(t_m) and math.isfinite(t_l)):
            censored.append({"image": i, "threshold_max": t_m, "threshold_min": t_l})
            continue
        log_ratios.append(math.log(t_l / t_m))
    return {
        "D": float(np.mean(log_ratios)) if log_ratios else math.nan,
        "log_ratios": log_ratios,
        "censored": censored,
    }
