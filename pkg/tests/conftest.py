"""Shared fixtures: deterministic test images and pinned zoo parameters.

Gain-pool sigmas deliberately avoid values where ceil(4*sigma) changes
(e.g. 1.0, 1.5): the truncated kernel support jumps there, and
finite-difference checks of sigma gradients would straddle the jump.
"""

import numpy as np
import pytest

from distortlab.convolution import conv2d_single
from distortlab.kernels import gaussian_kernel
from distortlab.noise import NoiseStream
from distortlab.zoo import (
    LgnParams,
    OnOffParams,
    cnn_model,
    lg_model,
    lgg_model,
    ln_model,
    mse_model,
    onoff_model,
    random_cnn_params,
)

LGN_ON = LgnParams(0.6, 1.2, 2.0, 1.6, 1.5, 1.1)
LGN_OFF = LgnParams(0.8, 1.7, 3.0, 1.9, 2.0, 1.3)
ONOFF_FIXTURE = OnOffParams(LGN_ON, LGN_OFF)

FIXTURE_IMAGE_SEEDS = (101, 202, 303)


def make_image(seed, shape=(16, 16)):
    """Smooth seeded luminance in [0.2, 0.8]."""
    g = NoiseStream(seed).normal_grid(shape)
    g = conv2d_single(g, gaussian_kernel(1.5))
    g = (g - g.min()) / (g.max() - g.min())
    return 0.2 + 0.6 * g


def zoo_chains(shape=(16, 16)):
    """The six pinned model fixtures used across the suite."""
    return {
        "mse": mse_model(shape),
        "ln": ln_model(LGN_ON, shape),
        "lg": lg_model(LGN_ON, shape),
        "lgg": lgg_model(LGN_ON, shape),
        "onoff": onoff_model(ONOFF_FIXTURE, shape),
        "cnn": cnn_model(random_cnn_params(0), shape),
    }


@pytest.fixture(scope="session")
def image16():
    return make_image(FIXTURE_IMAGE_SEEDS[0])


@pytest.fixture(scope="session")
def image12():
    return make_image(7, shape=(12, 12))


@pytest.fixture(scope="session")
def image8():
    return make_image(11, shape=(8, 8))


def assert_close(a, b, rtol, name="value"):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(float(np.max(np.abs(b))), 1e-300)
    err = float(np.max(np.abs(a - b))) / denom
    assert err <= rtol, f"{name}: relative error {err:.3e} > {rtol:.1e}"
