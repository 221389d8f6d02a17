"""Grid containers and small-vector arithmetic.

Images and multi-channel responses are plain ``numpy`` arrays in double
precision: a Grid2 is a 2-D ``(height, width)`` array, a Grid3 a 3-D
``(channels, height, width)`` array, both C-contiguous row-major.  The
helpers here validate those conventions at module boundaries and provide
the handful of vector primitives the eigensolvers need with a fixed
evaluation order.
"""

from __future__ import annotations

import numpy as np

from .errors import InputDomainError, ParameterError, ShapeError

__all__ = [
    "as_grid2",
    "as_grid3",
    "lift_to_grid3",
    "dot",
    "l2_norm",
    "scale",
    "axpy",
    "normalize",
]


def as_grid2(data, name: str = "grid") -> np.ndarray:
    """Validate and return a 2-D double-precision grid."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputDomainError(f"{name}: non-finite entries")
    return np.ascontiguousarray(a)


def as_grid3(data, name: str = "grid") -> np.ndarray:
    """Validate and return a 3-D (channels, height, width) grid."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"{name}: expected 3-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputDomainError(f"{name}: non-finite entries")
    return np.ascontiguousarray(a)


def lift_to_grid3(image) -> np.ndarray:
    """Copy a 2-D image into a single-channel Grid3.

    Always copies so chain outputs never alias caller-owned buffers (an
    identity chain would otherwise return a view of its input).
    """
    a = as_grid2(image, "image")
    return a[np.newaxis, :, :].copy()


def dot(a, b) -> float:
    """Inner product over all entries, shapes must match exactly."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def l2_norm(a) -> float:
    """Euclidean norm over all entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.dot(a.ravel(), a.ravel())))


def scale(c: float, a) -> np.ndarray:
    """Return c * a."""
    return float(c) * np.asarray(a, dtype=np.float64)


def axpy(c: float, x, y) -> np.ndarray:
    """Return c * x + y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"axpy: shape mismatch {x.shape} vs {y.shape}")
    return float(c) * x + y


def normalize(v) -> np.ndarray:
    """Return v / ||v||; rejects the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    n = l2_norm(v)
    if n == 0.0:
        raise ParameterError("normalize: zero vector")
    return v / n
