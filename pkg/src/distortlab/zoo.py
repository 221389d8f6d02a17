"""Concrete perceptual models: pixel baseline, retinal gain-control cascades,
and a generic 4-layer CNN.

The structured family mimics early visual processing: a center-surround
difference-of-Gaussians front end, divisive normalization by a local
luminance measure, a second normalization by a local contrast measure, and
a softplus output nonlinearity.  The members differ only in how many of
those elements they keep:

* ``ln``    - DoG filter + softplus (2 parameters)
* ``lg``    - adds luminance gain control (4 parameters)
* ``lgg``   - adds contrast gain control (6 parameters)
* ``onoff`` - two parallel lgg channels with opposite-sign filters
              (12 parameters)

Every model is a :class:`~distortlab.stages.ModelChain` whose stages carry
hand-derived jvp/vjp/param_vjp, so the whole zoo plugs into the Fisher
operator and the trainer without any autodiff dependency.

Gain denominators have the form ``1 + amplitude * pooled``, where the
pooled signal is non-negative for non-negative luminance input, so they
are provably >= 1 and the divisions cannot blow up.  The contrast pool
adds ``eps = 1e-8`` inside its square root to keep the derivative finite
at exactly-zero local contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convolution import (
    DENSE_OPERATOR_MAX_PIXELS,
    conv2d,
    conv2d_input_adjoint,
    conv2d_single,
    conv2d_single_adjoint,
    conv2d_weight_adjoint,
    dense_single_conv_matrix,
    output_dim,
)
from .errors import ParameterError, ShapeError
from .kernels import (
    KernelSpec,
    dog_kernel,
    dog_kernel_dsigma,
    gaussian_kernel,
    gaussian_kernel_dsigma,
)
from .noise import NoiseStream
from .stages import ModelChain, Stage

__all__ = [
    "softplus",
    "softplus_inverse",
    "sigmoid",
    "SoftplusStage",
    "softplus_stage",
    "ConvStage",
    "DivisorStage",
    "DogFrontStage",
    "LuminanceGainStage",
    "ContrastGainStage",
    "LgnParams",
    "OnOffParams",
    "CnnParams",
    "CNN_CHANNELS",
    "CNN_KERNEL",
    "CNN_CONV_WEIGHT_COUNT",
    "mse_model",
    "ln_model",
    "lg_model",
    "lgg_model",
    "onoff_model",
    "cnn_model",
    "random_cnn_params",
    "ModelFamily",
    "FAMILIES",
    "get_family",
    "build_from_theta",
]

CONTRAST_EPS = 1e-8


def softplus(x):
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Derivative of softplus, 1 / (1 + exp(-x)), overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_inverse(y):
    """Inverse of softplus on (0, inf): y + log(-expm1(-y))."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ParameterError("softplus_inverse requires positive input")
    return y + np.log(-np.expm1(-y))


class SoftplusStage(Stage):
    """Elementwise softplus rectifier."""

    def forward(self, x):
        return softplus(x)

    def jvp(self, x, v):
        return sigmoid(x) * v

    def vjp(self, x, u):
        return sigmoid(x) * u

    def linearize(self, x):
        s = sigmoid(x)
        return (lambda v: s * v, lambda u: s * u)


def softplus_stage() -> Stage:
    return SoftplusStage()


class _KernelOperator:
    """Stride-1 single-kernel convolution with a small-grid dense fast path.

    Stages reuse one instance per kernel; the dense matrix is memoized per
    image size (building it twice under a race is idempotent).
    """

    def __init__(self, kernel: KernelSpec):
        self.kernel = kernel
        self._dense = {}

    def matrix(self, height: int, width: int):
        if height * width > DENSE_OPERATOR_MAX_PIXELS:
            return None
        key = (height, width)
        if key not in self._dense:
            self._dense[key] = dense_single_conv_matrix(self.kernel.taps, height, width)
        return self._dense[key]

    def apply(self, img: np.ndarray) -> np.ndarray:
        mat = self.matrix(*img.shape)
        if mat is None:
            return conv2d_single(img, self.kernel)
        return (mat @ img.ravel()).reshape(img.shape)

    def apply_adjoint(self, cot: np.ndarray) -> np.ndarray:
        mat = self.matrix(*cot.shape)
        if mat is None:
            return conv2d_single_adjoint(cot, self.kernel, cot.shape[0], cot.shape[1])
        return (mat.T @ cot.ravel()).reshape(cot.shape)


class ConvStage(Stage):
    """Strided mirror-boundary convolution bank; weights are trainable."""

    def __init__(self, weights, stride: int = 1):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError("ConvStage weights must be (C_out, C_in, KH, KW)")
        self.stride = int(stride)
        self.param_count = self.weights.size
        self._scatter = {}

    def forward(self, x):
        return conv2d(x, self.weights, self.stride)

    def jvp(self, x, v):
        return conv2d(v, self.weights, self.stride)

    def vjp(self, x, u):
        return conv2d_input_adjoint(u, self.weights, self.stride, x.shape[1], x.shape[2])

    def param_vjp(self, x, u):
        return conv2d_weight_adjoint(x, u, self.weights.shape, self.stride).ravel()

    def linearize(self, x):
        c_out, c_in, kh, kw = self.weights.shape
        _, height, width = x.shape
        in_size = c_in * height * width
        if in_size > DENSE_OPERATOR_MAX_PIXELS:
            return super().linearize(x)
        key = (height, width)
        if key not in self._scatter:
            # materialize the stage's linear map column by column; the
            # eigensolver applies it thousands of times per base image
            basis = np.zeros((c_in, height, width))
            cols = []
            for j in range(in_size):
                basis.ravel()[j] = 1.0
                cols.append(conv2d(basis, self.weights, self.stride).ravel())
                basis.ravel()[j] = 0.0
            self._scatter[key] = np.stack(cols, axis=1)
        dense = self._scatter[key]
        h_out = output_dim(height, self.stride)
        w_out = output_dim(width, self.stride)

        def fwd(v):
            return (dense @ v.ravel()).reshape(c_out, h_out, w_out)

        def adj(u):
            return (dense.T @ u.ravel()).reshape(c_in, height, width)

        return fwd, adj

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.weights.shape[1]:
            raise ShapeError(
                f"conv stage expects {self.weights.shape[1]} channels, got {c}"
            )
        return (
            self.weights.shape[0],
            output_dim(h, self.stride),
            output_dim(w, self.stride),
        )


class DivisorStage(Stage):
    """y = x / divisor with a frozen scalar divisor (not gradient-trained)."""

    def __init__(self, divisor: float):
        divisor = float(divisor)
        if divisor <= 0.0:
            raise ParameterError(f"divisor must be positive, got {divisor}")
        self.divisor = divisor

    def forward(self, x):
        return x / self.divisor

    def jvp(self, x, v):
        return v / self.divisor

    def vjp(self, x, u):
        return u / self.divisor


class DogFrontStage(Stage):
    """Signed difference-of-Gaussians filter bank, optionally carrying the
    raw input along as an extra channel for downstream luminance pooling.

    Input is (1, H, W); output channel i is ``sign_i * (DoG_i * x)``.
    Parameters per channel: [sigma_center, sigma_surround].
    """

    def __init__(self, channels, carry_input: bool):
        # channels: sequence of (sigma_center, sigma_surround, sign)
        self.channels = [(float(sc), float(ss), float(sg)) for sc, ss, sg in channels]
        self.carry_input = bool(carry_input)
        self.kernels = [dog_kernel(sc, ss) for sc, ss, _ in self.channels]
        self._ops = [_KernelOperator(k) for k in self.kernels]
        self.param_count = 2 * len(self.channels)

    def forward(self, x):
        img = x[0]
        outs = [sg * op.apply(img) for (_, _, sg), op in zip(self.channels, self._ops)]
        if self.carry_input:
            outs.append(img)
        return np.stack(outs)

    def jvp(self, x, v):
        return self.forward(v)  # linear map

    def vjp(self, x, u):
        h, w = x.shape[1], x.shape[2]
        acc = np.zeros((h, w))
        for i, ((_, _, sg), op) in enumerate(zip(self.channels, self._ops)):
            acc += sg * op.apply_adjoint(u[i])
        if self.carry_input:
            acc += u[len(self.channels)]
        return acc[np.newaxis]

    def param_vjp(self, x, u):
        img = x[0]
        grads = np.empty(self.param_count)
        for i, (sc, ss, sg) in enumerate(self.channels):
            d_c, d_s = dog_kernel_dsigma(sc, ss)
            grads[2 * i] = sg * float(np.sum(u[i] * conv2d_single(img, KernelSpec(d_c))))
            grads[2 * i + 1] = sg * float(np.sum(u[i] * conv2d_single(img, KernelSpec(d_s))))
        return grads

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != 1:
            raise ShapeError(f"DoG front end expects a single channel, got {c}")
        return (len(self.channels) + (1 if self.carry_input else 0), h, w)


class LuminanceGainStage(Stage):
    """Divisive normalization by pooled local luminance.

    Input is (k+1, H, W): k filtered channels plus the raw image carried in
    the last channel.  Each output channel is
    ``v_i / (1 + a_i * (G_{sigma_i} * x))``; the carry channel is consumed.
    Parameters per channel: [amplitude, sigma].
    """

    def __init__(self, gains):
        # gains: sequence of (amplitude, sigma) per signal channel
        self.gains = [(float(a), float(s)) for a, s in gains]
        for a, s in self.gains:
            if a < 0.0:
                raise ParameterError(f"luminance amplitude must be >= 0, got {a}")
            if s <= 0.0:
                raise ParameterError(f"luminance sigma must be positive, got {s}")
        self._ops = [_KernelOperator(gaussian_kernel(s)) for _, s in self.gains]
        self.param_count = 2 * len(self.gains)

    def _denominators(self, img):
        dens = []
        for (a, _), op in zip(self.gains, self._ops):
            den = 1.0 + a * op.apply(img)
            assert float(den.min()) > 0.5, "luminance gain denominator collapsed"
            dens.append(den)
        return dens

    def forward(self, x):
        img = x[-1]
        dens = self._denominators(img)
        return np.stack([x[i] / dens[i] for i in range(len(self.gains))])

    def jvp(self, x, v):
        img, dimg = x[-1], v[-1]
        dens = self._denominators(img)
        out = []
        for i, ((a, _), op) in enumerate(zip(self.gains, self._ops)):
            dden = a * op.apply(dimg)
            out.append(v[i] / dens[i] - x[i] * dden / dens[i] ** 2)
        return np.stack(out)

    def vjp(self, x, u):
        img = x[-1]
        dens = self._denominators(img)
        out = np.zeros_like(x)
        for i, ((a, _), op) in enumerate(zip(self.gains, self._ops)):
            out[i] = u[i] / dens[i]
            t = -a * u[i] * x[i] / dens[i] ** 2
            out[-1] += op.apply_adjoint(t)
        return out

    def param_vjp(self, x, u):
        img = x[-1]
        grads = np.empty(self.param_count)
        for i, ((a, s), op) in enumerate(zip(self.gains, self._ops)):
            pooled = op.apply(img)
            den = 1.0 + a * pooled
            common = -u[i] * x[i] / den**2
            grads[2 * i] = float(np.sum(common * pooled))
            dpool = conv2d_single(img, KernelSpec(gaussian_kernel_dsigma(s)))
            grads[2 * i + 1] = float(np.sum(common * a * dpool))
        return grads

    def linearize(self, x):
        img = x[-1]
        dens = self._denominators(img)
        inv_den = [1.0 / d for d in dens]
        coeff = [x[i] * a * inv_den[i] ** 2 for i, (a, _) in enumerate(self.gains)]
        n = len(self.gains)

        def fwd(v):
            dimg = v[-1]
            return np.stack(
                [v[i] * inv_den[i] - coeff[i] * self._ops[i].apply(dimg) for i in range(n)]
            )

        def adj(u):
            out = np.empty_like(x)
            acc = np.zeros_like(img)
            for i in range(n):
                out[i] = u[i] * inv_den[i]
                acc -= self._ops[i].apply_adjoint(u[i] * coeff[i])
            out[-1] = acc
            return out

        return fwd, adj

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != len(self.gains) + 1:
            raise ShapeError(
                f"luminance gain expects {len(self.gains)} signal channels plus a "
                f"carried image, got {c} channels"
            )
        return (len(self.gains), h, w)


class ContrastGainStage(Stage):
    """Divisive normalization by pooled local contrast.

    Each channel is divided by ``1 + a_i * sqrt(G_{sigma_i} * w_i^2 + eps)``
    where w_i is that channel's own input; the pool is sign-invariant.
    Parameters per channel: [amplitude, sigma].
    """

    def __init__(self, gains):
        self.gains = [(float(a), float(s)) for a, s in gains]
        for a, s in self.gains:
            if a < 0.0:
                raise ParameterError(f"contrast amplitude must be >= 0, got {a}")
            if s <= 0.0:
                raise ParameterError(f"contrast sigma must be positive, got {s}")
        self._ops = [_KernelOperator(gaussian_kernel(s)) for _, s in self.gains]
        self.param_count = 2 * len(self.gains)

    def _pool(self, w, i):
        a, _ = self.gains[i]
        s_val = np.sqrt(self._ops[i].apply(w * w) + CONTRAST_EPS)
        return s_val, 1.0 + a * s_val

    def forward(self, x):
        return np.stack([x[i] / self._pool(x[i], i)[1] for i in range(len(self.gains))])

    def jvp(self, x, v):
        out = []
        for i, (a, _) in enumerate(self.gains):
            s_val, cden = self._pool(x[i], i)
            ds = self._ops[i].apply(x[i] * v[i]) / s_val
            out.append(v[i] / cden - x[i] * a * ds / cden**2)
        return np.stack(out)

    def vjp(self, x, u):
        out = np.empty_like(x)
        for i, (a, _) in enumerate(self.gains):
            s_val, cden = self._pool(x[i], i)
            t = -a * u[i] * x[i] / cden**2
            out[i] = u[i] / cden + x[i] * self._ops[i].apply_adjoint(t / s_val)
        return out

    def param_vjp(self, x, u):
        grads = np.empty(self.param_count)
        for i, (a, s) in enumerate(self.gains):
            s_val, cden = self._pool(x[i], i)
            common = -u[i] * x[i] / cden**2
            grads[2 * i] = float(np.sum(common * s_val))
            dpool = conv2d_single(x[i] * x[i], KernelSpec(gaussian_kernel_dsigma(s)))
            grads[2 * i + 1] = float(np.sum(common * a * dpool / (2.0 * s_val)))
        return grads

    def linearize(self, x):
        n = len(self.gains)
        inv_cden, front, inv_s = [], [], []
        for i in range(n):
            a, _ = self.gains[i]
            s_val, cden = self._pool(x[i], i)
            inv_cden.append(1.0 / cden)
            front.append(a * x[i] / cden**2)
            inv_s.append(1.0 / s_val)

        def fwd(v):
            out = np.empty_like(v)
            for i in range(n):
                ds = self._ops[i].apply(x[i] * v[i]) * inv_s[i]
                out[i] = v[i] * inv_cden[i] - front[i] * ds
            return out

        def adj(u):
            out = np.empty_like(u)
            for i in range(n):
                t = -u[i] * front[i] * inv_s[i]
                out[i] = u[i] * inv_cden[i] + x[i] * self._ops[i].apply_adjoint(t)
            return out

        return fwd, adj


@dataclass(frozen=True)
class LgnParams:
    """Per-channel parameters of the structured cascade.

    ``ln`` uses the two filter scales; ``lg`` adds the luminance pair;
    ``lgg`` and each ``onoff`` channel use all six.
    """

    sigma_center: float
    sigma_surround: float
    lum_amplitude: float = 0.0
    lum_sigma: float = 1.0
    con_amplitude: float = 0.0
    con_sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sigma_center < self.sigma_surround:
            raise ParameterError(
                f"need 0 < sigma_center < sigma_surround, got "
                f"({self.sigma_center}, {self.sigma_surround})"
            )
        if self.lum_amplitude < 0.0 or self.con_amplitude < 0.0:
            raise ParameterError("gain amplitudes must be non-negative")
        if self.lum_sigma <= 0.0 or self.con_sigma <= 0.0:
            raise ParameterError("gain pool sigmas must be positive")


@dataclass(frozen=True)
class OnOffParams:
    """Two independent channel parameter sets; the off filter is negated."""

    on: LgnParams
    off: LgnParams


CNN_CHANNELS = (1, 4, 16, 64, 256)
CNN_KERNEL = 5
CNN_CONV_WEIGHT_COUNT = sum(
    CNN_CHANNELS[i + 1] * CNN_CHANNELS[i] * CNN_KERNEL * CNN_KERNEL for i in range(4)
)  # 100 + 1,600 + 25,600 + 409,600 = 436,900


@dataclass(frozen=True)
class CnnParams:
    """Four 5x5 convolution banks (stride 2, channels 1-4-16-64-256) plus a
    frozen per-layer normalization divisor.

    The trainable weight count is 436,900; normalization divisors are batch
    statistics, not gradient-trained parameters (see docs for the published
    436,908 figure reconciliation).
    """

    weights: tuple
    divisors: tuple

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.divisors) != 4:
            raise ParameterError("cnn expects 4 weight banks and 4 divisors")
        ws = []
        for i, w in enumerate(self.weights):
            w = np.asarray(w, dtype=np.float64)
            expect = (CNN_CHANNELS[i + 1], CNN_CHANNELS[i], CNN_KERNEL, CNN_KERNEL)
            if w.shape != expect:
                raise ShapeError(f"cnn layer {i} weights: {w.shape} != {expect}")
            ws.append(w)
        ds = tuple(float(d) for d in self.divisors)
        if any(d <= 0.0 for d in ds):
            raise ParameterError("cnn divisors must be positive")
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "divisors", ds)


def mse_model(image_shape) -> ModelChain:
    """Pixel-identity baseline: every distortion direction is equally visible."""
    return ModelChain([], image_shape)


def ln_model(params: LgnParams, image_shape) -> ModelChain:
    """Linear (DoG) filter followed by softplus."""
    stages = [
        DogFrontStage([(params.sigma_center, params.sigma_surround, 1.0)], carry_input=False),
        SoftplusStage(),
    ]
    return ModelChain(stages, image_shape)


def lg_model(params: LgnParams, image_shape) -> ModelChain:
    """DoG filter with luminance gain control, then softplus."""
    stages = [
        DogFrontStage([(params.sigma_center, params.sigma_surround, 1.0)], carry_input=True),
        LuminanceGainStage([(params.lum_amplitude, params.lum_sigma)]),
        SoftplusStage(),
    ]
    return ModelChain(stages, image_shape)


def lgg_model(params: LgnParams, image_shape) -> ModelChain:
    """DoG filter with luminance and contrast gain control, then softplus."""
    stages = [
        DogFrontStage([(params.sigma_center, params.sigma_surround, 1.0)], carry_input=True),
        LuminanceGainStage([(params.lum_amplitude, params.lum_sigma)]),
        ContrastGainStage([(params.con_amplitude, params.con_sigma)]),
        SoftplusStage(),
    ]
    return ModelChain(stages, image_shape)


def onoff_model(params: OnOffParams, image_shape) -> ModelChain:
    """Two-channel cascade with opposite-sign filters and per-channel gains."""
    on, off = params.on, params.off
    stages = [
        DogFrontStage(
            [
                (on.sigma_center, on.sigma_surround, 1.0),
                (off.sigma_center, off.sigma_surround, -1.0),
            ],
            carry_input=True,
        ),
        LuminanceGainStage([(on.lum_amplitude, on.lum_sigma), (off.lum_amplitude, off.lum_sigma)]),
        ContrastGainStage([(on.con_amplitude, on.con_sigma), (off.con_amplitude, off.con_sigma)]),
        SoftplusStage(),
    ]
    return ModelChain(stages, image_shape)


def cnn_model(params: CnnParams, image_shape) -> ModelChain:
    """Four blocks of (5x5 conv, stride 2) -> divide by frozen std -> softplus."""
    h, w = int(image_shape[0]), int(image_shape[1])
    if h < 16 or w < 16:
        raise ShapeError(f"cnn needs at least 16x16 input, got {h}x{w}")
    stages = []
    taps = []
    for i in range(4):
        stages.append(ConvStage(params.weights[i], stride=2))
        stages.append(DivisorStage(params.divisors[i]))
        stages.append(SoftplusStage())
        taps.append(len(stages) - 1)
    return ModelChain(stages, image_shape, tap_indices=taps)


def random_cnn_params(seed: int, scale: float = 1.0) -> CnnParams:
    """Fan-in-scaled Gaussian conv weights with unit divisors."""
    stream = NoiseStream(seed)
    weights = []
    for i in range(4):
        shape = (CNN_CHANNELS[i + 1], CNN_CHANNELS[i], CNN_KERNEL, CNN_KERNEL)
        fan_in = CNN_CHANNELS[i] * CNN_KERNEL * CNN_KERNEL
        weights.append(stream.substream(i).normal_grid(shape) * (scale / np.sqrt(fan_in)))
    return CnnParams(weights=tuple(weights), divisors=(1.0, 1.0, 1.0, 1.0))


# --- unconstrained parameterization -------------------------------------
#
# Trainable parameters live in an unconstrained vector theta; scales and
# amplitudes map through softplus, and the surround scale is center plus a
# softplus gap so the ordering constraint can never be violated during
# gradient ascent.


def _lgn_block_constrain(theta):
    sc = float(softplus(theta[0]))
    ss = sc + float(softplus(theta[1]))
    return sc, ss


def _lgn_block_unconstrain(sc, ss):
    return float(softplus_inverse(sc)), float(softplus_inverse(ss - sc))


def _lgn_constrain(theta, n: int) -> LgnParams:
    sc, ss = _lgn_block_constrain(theta[0:2])
    kw = {}
    if n >= 4:
        kw["lum_amplitude"] = float(softplus(theta[2]))
        kw["lum_sigma"] = float(softplus(theta[3]))
    if n >= 6:
        kw["con_amplitude"] = float(softplus(theta[4]))
        kw["con_sigma"] = float(softplus(theta[5]))
    return LgnParams(sc, ss, **kw)


def _lgn_unconstrain(p: LgnParams, n: int) -> np.ndarray:
    vals = list(_lgn_block_unconstrain(p.sigma_center, p.sigma_surround))
    if n >= 4:
        vals += [float(softplus_inverse(p.lum_amplitude)), float(softplus_inverse(p.lum_sigma))]
    if n >= 6:
        vals += [float(softplus_inverse(p.con_amplitude)), float(softplus_inverse(p.con_sigma))]
    return np.asarray(vals)


def _lgn_theta_grad(theta, pgrad, n: int) -> np.ndarray:
    # chain param order: [sc, ss, (a_L, s_L), (a_C, s_C)]
    out = np.empty(n)
    out[0] = (pgrad[0] + pgrad[1]) * float(sigmoid(theta[0]))
    out[1] = pgrad[1] * float(sigmoid(theta[1]))
    for i in range(2, n):
        out[i] = pgrad[i] * float(sigmoid(theta[i]))
    return out


def _onoff_constrain(theta) -> OnOffParams:
    t = np.asarray(theta, dtype=np.float64)
    on_sc, on_ss = _lgn_block_constrain(t[0:2])
    off_sc, off_ss = _lgn_block_constrain(t[2:4])
    on = LgnParams(
        on_sc, on_ss,
        lum_amplitude=float(softplus(t[4])), lum_sigma=float(softplus(t[5])),
        con_amplitude=float(softplus(t[8])), con_sigma=float(softplus(t[9])),
    )
    off = LgnParams(
        off_sc, off_ss,
        lum_amplitude=float(softplus(t[6])), lum_sigma=float(softplus(t[7])),
        con_amplitude=float(softplus(t[10])), con_sigma=float(softplus(t[11])),
    )
    return OnOffParams(on, off)


def _onoff_unconstrain(p: OnOffParams) -> np.ndarray:
    on, off = p.on, p.off
    vals = list(_lgn_block_unconstrain(on.sigma_center, on.sigma_surround))
    vals += list(_lgn_block_unconstrain(off.sigma_center, off.sigma_surround))
    vals += [float(softplus_inverse(on.lum_amplitude)), float(softplus_inverse(on.lum_sigma))]
    vals += [float(softplus_inverse(off.lum_amplitude)), float(softplus_inverse(off.lum_sigma))]
    vals += [float(softplus_inverse(on.con_amplitude)), float(softplus_inverse(on.con_sigma))]
    vals += [float(softplus_inverse(off.con_amplitude)), float(softplus_inverse(off.con_sigma))]
    return np.asarray(vals)


def _onoff_theta_grad(theta, pgrad) -> np.ndarray:
    # chain param order: front [sc_on, ss_on, sc_off, ss_off],
    # lum [a_on, s_on, a_off, s_off], con [a_on, s_on, a_off, s_off]
    t = np.asarray(theta, dtype=np.float64)
    out = np.empty(12)
    out[0] = (pgrad[0] + pgrad[1]) * float(sigmoid(t[0]))
    out[1] = pgrad[1] * float(sigmoid(t[1]))
    out[2] = (pgrad[2] + pgrad[3]) * float(sigmoid(t[2]))
    out[3] = pgrad[3] * float(sigmoid(t[3]))
    for i in range(4, 12):
        out[i] = pgrad[i] * float(sigmoid(t[i]))
    return out


def _cnn_weight_shapes():
    return [
        (CNN_CHANNELS[i + 1], CNN_CHANNELS[i], CNN_KERNEL, CNN_KERNEL) for i in range(4)
    ]


def _cnn_constrain(theta) -> CnnParams:
    t = np.asarray(theta, dtype=np.float64)
    if t.size != CNN_CONV_WEIGHT_COUNT + 4:
        raise ParameterError(
            f"cnn theta must have {CNN_CONV_WEIGHT_COUNT + 4} entries, got {t.size}"
        )
    weights, pos = [], 0
    for shape in _cnn_weight_shapes():
        size = int(np.prod(shape))
        weights.append(t[pos : pos + size].reshape(shape))
        pos += size
    divisors = tuple(float(d) for d in softplus(t[pos:]))
    return CnnParams(weights=tuple(weights), divisors=divisors)


def _cnn_unconstrain(p: CnnParams) -> np.ndarray:
    flats = [np.asarray(w).ravel() for w in p.weights]
    flats.append(softplus_inverse(np.asarray(p.divisors)))
    return np.concatenate(flats)


def _cnn_theta_grad(theta, pgrad) -> np.ndarray:
    # conv weights are unconstrained; divisor slots are batch statistics and
    # carry no gradient.
    out = np.zeros(CNN_CONV_WEIGHT_COUNT + 4)
    out[:CNN_CONV_WEIGHT_COUNT] = pgrad
    return out


@dataclass(frozen=True)
class ModelFamily:
    """Everything the trainer and CLI need to know about one model type."""

    name: str
    theta_size: int
    trainable_count: int
    _build: callable = field(repr=False)
    _constrain: callable = field(repr=False)
    _unconstrain: callable = field(repr=False)
    _theta_grad: callable = field(repr=False)
    _default_theta: callable = field(repr=False)

    def build(self, params, image_shape) -> ModelChain:
        return self._build(params, image_shape)

    def constrain(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.theta_size,):
            raise ParameterError(
                f"{self.name}: theta must have {self.theta_size} entries, "
                f"got shape {theta.shape}"
            )
        return self._constrain(theta)

    def unconstrain(self, params) -> np.ndarray:
        return self._unconstrain(params)

    def theta_grad(self, theta, param_grad) -> np.ndarray:
        """Pull a chain parameter gradient back through the constrain map."""
        return self._theta_grad(theta, param_grad)

    def default_theta(self) -> np.ndarray:
        return self._default_theta()

    def build_theta(self, theta, image_shape) -> ModelChain:
        return self.build(self.constrain(theta), image_shape)


# default pool sigmas avoid ceil(4*sigma) truncation boundaries (kernels.py)
def _default_lgn_theta(n: int) -> np.ndarray:
    full = LgnParams(0.7, 1.4, 1.0, 1.6, 1.0, 1.1)
    return _lgn_unconstrain(full, n)


def _default_onoff_theta() -> np.ndarray:
    on = LgnParams(0.7, 1.4, 1.0, 1.6, 1.0, 1.1)
    off = LgnParams(0.9, 1.8, 1.0, 1.7, 1.0, 1.2)
    return _onoff_unconstrain(OnOffParams(on, off))


FAMILIES = {
    "mse": ModelFamily(
        "mse", 0, 0,
        _build=lambda p, shape: mse_model(shape),
        _constrain=lambda t: None,
        _unconstrain=lambda p: np.zeros(0),
        _theta_grad=lambda t, g: np.zeros(0),
        _default_theta=lambda: np.zeros(0),
    ),
    "ln": ModelFamily(
        "ln", 2, 2,
        _build=ln_model,
        _constrain=lambda t: _lgn_constrain(t, 2),
        _unconstrain=lambda p: _lgn_unconstrain(p, 2),
        _theta_grad=lambda t, g: _lgn_theta_grad(t, g, 2),
        _default_theta=lambda: _default_lgn_theta(2),
    ),
    "lg": ModelFamily(
        "lg", 4, 4,
        _build=lg_model,
        _constrain=lambda t: _lgn_constrain(t, 4),
        _unconstrain=lambda p: _lgn_unconstrain(p, 4),
        _theta_grad=lambda t, g: _lgn_theta_grad(t, g, 4),
        _default_theta=lambda: _default_lgn_theta(4),
    ),
    "lgg": ModelFamily(
        "lgg", 6, 6,
        _build=lgg_model,
        _constrain=lambda t: _lgn_constrain(t, 6),
        _unconstrain=lambda p: _lgn_unconstrain(p, 6),
        _theta_grad=lambda t, g: _lgn_theta_grad(t, g, 6),
        _default_theta=lambda: _default_lgn_theta(6),
    ),
    "onoff": ModelFamily(
        "onoff", 12, 12,
        _build=onoff_model,
        _constrain=_onoff_constrain,
        _unconstrain=_onoff_unconstrain,
        _theta_grad=_onoff_theta_grad,
        _default_theta=_default_onoff_theta,
    ),
    "cnn": ModelFamily(
        "cnn", CNN_CONV_WEIGHT_COUNT + 4, CNN_CONV_WEIGHT_COUNT,
        _build=cnn_model,
        _constrain=_cnn_constrain,
        _unconstrain=_cnn_unconstrain,
        _theta_grad=_cnn_theta_grad,
        _default_theta=lambda: _cnn_unconstrain(random_cnn_params(0)),
    ),
}


def get_family(name: str) -> ModelFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ParameterError(
            f"unknown model type {name!r}; choose from {sorted(FAMILIES)}"
        ) from None


def build_from_theta(name: str, theta, image_shape) -> ModelChain:
    """Construct a model chain from its serialized unconstrained vector."""
    return get_family(name).build_theta(theta, image_shape)
