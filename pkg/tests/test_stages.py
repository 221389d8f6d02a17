import numpy as np
import pytest

from conftest import LGN_ON, assert_close, make_image, zoo_chains
from distortlab.errors import InputDomainError, ShapeError, SizeLimitError
from distortlab.noise import NoiseStream
from distortlab.stages import (
    MatrixStage,
    ModelChain,
    ScaleStage,
    default_fd_step,
    dense_jacobian_fd,
)
from distortlab.zoo import SoftplusStage, lgg_model


def test_empty_chain_is_identity():
    chain = ModelChain([], (4, 5))
    x = NoiseStream(1).normal_grid((4, 5))
    out = chain.forward(x)
    assert out.shape == (1, 4, 5)
    assert np.array_equal(out[0], x)


def test_scale_composition():
    chain = ModelChain([ScaleStage(2.0), ScaleStage(3.0)], (3, 3))
    x = NoiseStream(2).normal_grid((3, 3))
    assert_close(chain.forward(x)[0], 6.0 * x, 1e-15, "scale composition")


def test_forward_rejects_nonfinite_input():
    chain = ModelChain([], (2, 2))
    with pytest.raises(InputDomainError):
        chain.forward(np.array([[1.0, np.inf], [0.0, 0.0]]))


def test_forward_rejects_wrong_shape():
    chain = ModelChain([], (2, 2))
    with pytest.raises(ShapeError):
        chain.forward(np.zeros((3, 3)))


def test_jvp_of_zero_tangent_is_zero():
    for name, chain in zoo_chains((16, 16)).items():
        x = make_image(1, (16, 16))
        out = chain.jvp(x, np.zeros((16, 16)))
        assert np.all(out == 0.0), name


def test_linear_chain_jvp_is_matrix_product():
    a = NoiseStream(4).normal_grid((6, 6))
    chain = ModelChain([MatrixStage(a)], (2, 3))
    x = NoiseStream(5).normal_grid((2, 3))
    v = NoiseStream(6).normal_grid((2, 3))
    assert_close(chain.jvp(x, v).ravel(), a @ v.ravel(), 1e-14, "A @ v")
    u = NoiseStream(7).normal_grid((6, 1, 1))
    assert_close(chain.vjp(x, u), (a.T @ u.ravel()).reshape(2, 3), 1e-14, "A^T @ u")


def test_vjp_of_zero_cotangent_is_zero():
    chain = lgg_model(LGN_ON, (8, 8))
    x = make_image(3, (8, 8))
    assert np.all(chain.vjp(x, np.zeros(chain.output_shape)) == 0.0)


@pytest.mark.parametrize("name", ["mse", "ln", "lg", "lgg", "onoff", "cnn"])
def test_adjoint_identity_100_probes(name):
    chain = zoo_chains((16, 16))[name]
    x = make_image(9, (16, 16))
    stream = NoiseStream(1000)
    for _ in range(100):
        v = stream.normal_grid(chain.image_shape)
        u = stream.normal_grid(chain.output_shape)
        lhs = float(np.sum(u * chain.jvp(x, v)))
        rhs = float(np.sum(chain.vjp(x, u) * v))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) / scale <= 1e-8, name


@pytest.mark.parametrize("name", ["mse", "ln", "lg", "lgg", "onoff", "cnn"])
def test_jvp_matches_central_differences(name):
    chain = zoo_chains((16, 16))[name]
    x = make_image(12, (16, 16))
    stream = NoiseStream(77)
    v = stream.normal_grid(chain.image_shape)
    h = default_fd_step(x)
    fd = (chain.forward(x + h * v) - chain.forward(x - h * v)) / (2.0 * h)
    jv = chain.jvp(x, v)
    denom = max(float(np.linalg.norm(jv.ravel())), 1e-300)
    assert float(np.linalg.norm((fd - jv).ravel())) / denom <= 1e-4, name


def test_jvp_linearity():
    chain = lgg_model(LGN_ON, (12, 12))
    x = make_image(2, (12, 12))
    stream = NoiseStream(8)
    v1 = stream.normal_grid((12, 12))
    v2 = stream.normal_grid((12, 12))
    a, b = 1.3, -2.1
    lhs = chain.jvp(x, a * v1 + b * v2)
    rhs = a * chain.jvp(x, v1) + b * chain.jvp(x, v2)
    assert_close(lhs, rhs, 1e-10, "jvp linearity")


def test_chain_rule_matches_stagewise_composition_bit_exactly():
    s1, s2 = ScaleStage(1.5), SoftplusStage()
    chain = ModelChain([s1, s2], (5, 5))
    x = make_image(3, (5, 5))
    v = NoiseStream(31).normal_grid((5, 5))
    via_chain = chain.jvp(x, v)
    x3 = x[np.newaxis]
    manual = s2.jvp(s1.forward(x3), s1.jvp(x3, v[np.newaxis]))
    assert np.array_equal(via_chain, manual)


def test_linearize_matches_plain_paths():
    for name, chain in zoo_chains((16, 16)).items():
        x = make_image(21, (16, 16))
        lin = chain.linearize(x)
        stream = NoiseStream(5)
        v = stream.normal_grid((16, 16))
        u = stream.normal_grid(chain.output_shape)
        assert_close(lin.jvp(v), chain.jvp(x, v), 1e-12, f"{name} jvp")
        assert_close(lin.vjp(u), chain.vjp(x, u), 1e-12, f"{name} vjp")


def test_dense_jacobian_identity_model():
    chain = ModelChain([], (4, 4))
    x = make_image(5, (4, 4))
    jac = dense_jacobian_fd(chain, x)
    assert np.max(np.abs(jac - np.eye(16))) <= 1e-10


def test_dense_jacobian_softplus_at_zero():
    chain = ModelChain([SoftplusStage()], (3, 3))
    jac = dense_jacobian_fd(chain, np.zeros((3, 3)), h=1e-5)
    assert np.max(np.abs(jac - 0.5 * np.eye(9))) <= 1e-6


def test_dense_jacobian_guard():
    chain = ModelChain([], (65, 65))
    with pytest.raises(SizeLimitError):
        dense_jacobian_fd(chain, np.zeros((65, 65)))


def test_dense_jacobian_product_matches_jvp_for_lgg():
    chain = lgg_model(LGN_ON, (8, 8))
    x = make_image(6, (8, 8))
    jac = dense_jacobian_fd(chain, x)
    v = NoiseStream(9).normal_grid((8, 8))
    jv = chain.jvp(x, v).ravel()
    fd = jac @ v.ravel()
    assert float(np.linalg.norm(fd - jv)) / float(np.linalg.norm(jv)) <= 1e-4


def test_param_vjp_concatenates_in_stage_order():
    chain = lgg_model(LGN_ON, (8, 8))
    assert chain.param_count == 6
    x = make_image(6, (8, 8))
    u = NoiseStream(10).normal_grid(chain.output_shape)
    g = chain.param_vjp(x, u)
    assert g.shape == (6,)
    assert np.all(np.isfinite(g))
