import math

import numpy as np
import pytest

from distortlab.errors import ParameterError, ShapeError
from distortlab.kernels import (
    KernelSpec,
    dog_kernel,
    dog_kernel_dsigma,
    gaussian_kernel,
    gaussian_kernel_dsigma,
)


def test_kernel_spec_requires_odd_dims():
    with pytest.raises(ShapeError):
        KernelSpec(np.ones((2, 3)))
    k = KernelSpec(np.ones((3, 5)))
    assert k.origin == (1, 2)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.3, 0.17])
def test_gaussian_unit_sum(sigma):
    k = gaussian_kernel(sigma)
    assert abs(k.taps.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("sigma", [0.3, 0.5, 1.0, 1.7])
def test_gaussian_peak_at_origin(sigma):
    k = gaussian_kernel(sigma)
    assert k.taps[k.origin] == k.taps.max()


def test_gaussian_center_tap_against_direct_summation():
    # brute-force oracle: center tap = 1/Z with Z summed over the support
    sigma = 1.0
    radius = math.ceil(4.0 * sigma)
    z = 0.0
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            z += math.exp(-(i * i + j * j) / (2.0 * sigma * sigma))
    k = gaussian_kernel(sigma)
    assert abs(k.taps[k.origin] - 1.0 / z) <= 1e-15


def test_gaussian_symmetry():
    k = gaussian_kernel(1.3).taps
    assert np.array_equal(k, k.T)
    assert np.array_equal(k, k[::-1, :])
    assert np.array_equal(k, np.rot90(k))


def test_gaussian_rejects_bad_sigma():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ParameterError):
            gaussian_kernel(bad)


def test_dog_zero_sum():
    k = dog_kernel(0.5, 1.5)
    assert abs(k.taps.sum()) <= 1e-12


def test_dog_center_surround_signs():
    k = dog_kernel(0.5, 1.5)
    assert k.taps[k.origin] > 0.0
    assert k.taps[0, 0] < 0.0  # far periphery


def test_dog_requires_ordered_sigmas():
    with pytest.raises(ParameterError):
        dog_kernel(1.5, 0.5)
    with pytest.raises(ParameterError):
        dog_kernel(1.0, 1.0)


@pytest.mark.parametrize("sigma", [0.6, 1.2, 2.2])
def test_gaussian_dsigma_matches_finite_differences(sigma):
    # sigma values sit away from ceil(4*sigma) support jumps
    h = 1e-6
    fd = (gaussian_kernel(sigma + h).taps - gaussian_kernel(sigma - h).taps) / (2 * h)
    analytic = gaussian_kernel_dsigma(sigma)
    assert np.max(np.abs(fd - analytic)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_dog_dsigma_matches_finite_differences():
    sc, ss = 0.6, 1.2
    h = 1e-6
    d_c, d_s = dog_kernel_dsigma(sc, ss)
    fd_c = (dog_kernel(sc + h, ss).taps - dog_kernel(sc - h, ss).taps) / (2 * h)
    fd_s = (dog_kernel(sc, ss + h).taps - dog_kernel(sc, ss - h).taps) / (2 * h)
    assert np.max(np.abs(fd_c - d_c)) <= 1e-6
    assert np.max(np.abs(fd_s - d_s)) <= 1e-6
