"""Gaussian and difference-of-Gaussians filter construction.

Kernels are truncated at radius ``ceil(4 * sigma)`` (omitted tail mass is
below 1e-4) and renormalized, so every Gaussian sums to exactly 1 and every
DoG sums to exactly 0 up to rounding.  Derivatives with respect to sigma
are computed analytically on the same (fixed) support; they are what the
trainer differentiates through, so they get their own finite-difference
tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "KernelSpec",
    "gaussian_kernel",
    "gaussian_kernel_dsigma",
    "dog_kernel",
    "dog_kernel_dsigma",
]


@dataclass(frozen=True)
class KernelSpec:
    """A 2-D filter with odd dimensions and its center tap as origin."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim != 2:
            raise ShapeError(f"kernel taps must be 2-D, got shape {t.shape}")
        if t.shape[0] % 2 == 0 or t.shape[1] % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {t.shape}")
        object.__setattr__(self, "taps", t)

    @property
    def origin(self) -> tuple[int, int]:
        return (self.taps.shape[0] // 2, self.taps.shape[1] // 2)

    @property
    def radius(self) -> int:
        return self.taps.shape[0] // 2


def _check_sigma(sigma: float, name: str) -> float:
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma <= 0.0:
        raise ParameterError(f"{name} must be positive and finite, got {sigma!r}")
    return sigma


def _gaussian_grid(sigma: float, radius: int):
    """Unnormalized taps exp(-(i^2+j^2)/(2 sigma^2)) on a fixed support."""
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    rho = coords[:, None] ** 2 + coords[None, :] ** 2
    taps = np.exp(-rho / (2.0 * sigma * sigma))
    return taps, rho


def gaussian_kernel(sigma: float) -> KernelSpec:
    """Isotropic unit-sum Gaussian truncated at radius ceil(4 sigma)."""
    sigma = _check_sigma(sigma, "sigma")
    radius = math.ceil(4.0 * sigma)
    taps, _ = _gaussian_grid(sigma, radius)
    return KernelSpec(taps / taps.sum())


def gaussian_kernel_dsigma(sigma: float) -> np.ndarray:
    """d(taps)/d(sigma) of :func:`gaussian_kernel` on its fixed support.

    For normalized taps g = e / Z the derivative is
    ``g * (rho - E[rho]) / sigma^3`` with rho = i^2 + j^2 and E[rho] the
    g-weighted mean; valid wherever the truncation radius does not jump.
    """
    sigma = _check_sigma(sigma, "sigma")
    radius = math.ceil(4.0 * sigma)
    taps, rho = _gaussian_grid(sigma, radius)
    g = taps / taps.sum()
    mean_rho = float((g * rho).sum())
    return g * (rho - mean_rho) / sigma**3


def _embed(center: np.ndarray, radius_small: int, radius_big: int) -> np.ndarray:
    out = np.zeros((2 * radius_big + 1, 2 * radius_big + 1))
    lo = radius_big - radius_small
    hi = lo + 2 * radius_small + 1
    out[lo:hi, lo:hi] = center
    return out


def dog_kernel(sigma_center: float, sigma_surround: float) -> KernelSpec:
    """Difference of unit-sum Gaussians on the surround's support.

    Zero-sum by construction, so constant inputs are annihilated exactly.
    """
    sc = _check_sigma(sigma_center, "sigma_center")
    ss = _check_sigma(sigma_surround, "sigma_surround")
    if sc >= ss:
        raise ParameterError(
            f"sigma_center must be < sigma_surround, got {sc} >= {ss}"
        )
    center = gaussian_kernel(sc)
    surround = gaussian_kernel(ss)
    taps = _embed(center.taps, center.radius, surround.radius) - surround.taps
    return KernelSpec(taps)


def dog_kernel_dsigma(sigma_center: float, sigma_surround: float):
    """(d taps/d sigma_center, d taps/d sigma_surround) for :func:`dog_kernel`."""
    sc = _check_sigma(sigma_center, "sigma_center")
    ss = _check_sigma(sigma_surround, "sigma_surround")
    if sc >= ss:
        raise ParameterError(
            f"sigma_center must be < sigma_surround, got {sc} >= {ss}"
        )
    rc = math.ceil(4.0 * sc)
    rs = math.ceil(4.0 * ss)
    d_center = _embed(gaussian_kernel_dsigma(sc), rc, rs)
    d_surround = -gaussian_kernel_dsigma(ss)
    return d_center, d_surround
