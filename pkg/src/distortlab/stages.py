"""The differentiable-model contract: stages, chains, and derivative oracles.

A :class:`Stage` is a deterministic map between channel grids together
with hand-derived forward-mode (``jvp``) and reverse-mode (``vjp``)
directional derivatives, plus the gradient of its own parameters
(``param_vjp``).  Derivatives are written per stage rather than taped by a
general autodiff system: the stage set is small and fixed, and hand
adjoints keep the dependency surface at zero while making the adjoint
identity ``<u, J v> == <J^T u, v>`` a meaningful test rather than a
tautology.

:func:`dense_jacobian_fd` is the independent oracle: a dense Jacobian
assembled column by column from central finite differences, used to
cross-check every jvp/vjp in the test suite and by the CLI ``oracle``
subcommand.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, SizeLimitError
from .grids import as_grid2, as_grid3, lift_to_grid3

__all__ = [
    "Stage",
    "ScaleStage",
    "MatrixStage",
    "ModelChain",
    "default_fd_step",
    "dense_jacobian_fd",
]


class Stage:
    """Base class; subclasses implement forward/jvp/vjp (and params if any).

    ``jvp(x, v)`` and ``vjp(x, u)`` must be linear in their second argument
    and adjoint to each other.  ``param_vjp(x, u)`` returns the gradient of
    ``<u, forward(x)>`` with respect to this stage's own parameter vector
    (length ``param_count``, empty for parameterless stages).  Stages must
    be smooth on the domain they accept.
    """

    param_count: int = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_vjp(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.zeros(0)

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        return in_shape

    def linearize(self, x: np.ndarray):
        """(tangent map, adjoint map) closures at the expansion point x.

        The default wraps jvp/vjp directly; stages with expensive
        point-dependent state override this to precompute it once, since
        eigen-iteration applies the same linearization thousands of times.
        """
        return (lambda v: self.jvp(x, v), lambda u: self.vjp(x, u))


class ScaleStage(Stage):
    """y = c * x."""

    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, x):
        return self.factor * x

    def jvp(self, x, v):
        return self.factor * v

    def vjp(self, x, u):
        return self.factor * u


class MatrixStage(Stage):
    """y = A @ flatten(x), reshaped to (rows, 1, 1); a test workhorse."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError("MatrixStage expects a 2-D matrix")

    def forward(self, x):
        if x.size != self.matrix.shape[1]:
            raise ShapeError(
                f"MatrixStage: input size {x.size} != matrix columns {self.matrix.shape[1]}"
            )
        return (self.matrix @ x.ravel()).reshape(self.matrix.shape[0], 1, 1)

    def jvp(self, x, v):
        return (self.matrix @ v.ravel()).reshape(self.matrix.shape[0], 1, 1)

    def vjp(self, x, u):
        return (self.matrix.T @ u.ravel()).reshape(x.shape)

    def output_shape(self, in_shape):
        return (self.matrix.shape[0], 1, 1)


class ModelChain:
    """An ordered stage cascade from a 2-D image to a channel grid.

    Immutable after construction and safe to share across threads; all
    evaluation methods are reentrant pure functions.  ``tap_indices`` marks
    the stages whose outputs count as reportable responses for multi-stage
    metrics (defaults to the final stage only).
    """

    def __init__(self, stages, image_shape, tap_indices=None):
        self.stages = tuple(stages)
        h, w = (int(image_shape[0]), int(image_shape[1]))
        self.input_shape = (1, h, w)
        shape = self.input_shape
        self._stage_shapes = [shape]
        for st in self.stages:
            shape = st.output_shape(shape)
            self._stage_shapes.append(shape)
        self.output_shape = shape
        if tap_indices is None:
            tap_indices = (len(self.stages) - 1,) if self.stages else (None,)
        self.tap_indices = tuple(tap_indices)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.input_shape[1:]

    @property
    def input_size(self) -> int:
        return self.input_shape[1] * self.input_shape[2]

    @property
    def output_size(self) -> int:
        c, h, w = self.output_shape
        return c * h * w

    @property
    def param_count(self) -> int:
        return sum(st.param_count for st in self.stages)

    def _check_image(self, x, name="x"):
        a = as_grid2(x, name)
        if a.shape != self.image_shape:
            raise ShapeError(f"{name}: shape {a.shape} != model input {self.image_shape}")
        return a

    def forward(self, x) -> np.ndarray:
        """Model response f(x) as a (channels, height, width) grid."""
        cur = lift_to_grid3(self._check_image(x))
        for st in self.stages:
            cur = st.forward(cur)
        return cur

    def forward_all(self, x) -> list[np.ndarray]:
        """Inputs seen by each stage plus the final output (len = n+1)."""
        cur = lift_to_grid3(self._check_image(x))
        acts = [cur]
        for st in self.stages:
            cur = st.forward(cur)
            acts.append(cur)
        return acts

    def jvp(self, x, v) -> np.ndarray:
        """Directional derivative (df/dx) v via the forward-mode chain rule."""
        v = as_grid2(v, "tangent")
        if v.shape != self.image_shape:
            raise ShapeError(f"tangent shape {v.shape} != model input {self.image_shape}")
        cur = lift_to_grid3(self._check_image(x))
        tan = lift_to_grid3(v)
        for st in self.stages:
            tan = st.jvp(cur, tan)
            cur = st.forward(cur)
        return tan

    def vjp(self, x, u) -> np.ndarray:
        """Adjoint derivative (df/dx)^T u via reverse traversal."""
        u = as_grid3(u, "cotangent")
        if u.shape != self.output_shape:
            raise ShapeError(f"cotangent shape {u.shape} != model output {self.output_shape}")
        acts = self.forward_all(x)
        cot = u
        for i in range(len(self.stages) - 1, -1, -1):
            cot = self.stages[i].vjp(acts[i], cot)
        return cot[0].copy()

    def backward(self, x, u):
        """(input gradient, parameter gradient) of <u, f(x)> in one pass."""
        u = as_grid3(u, "cotangent")
        if u.shape != self.output_shape:
            raise ShapeError(f"cotangent shape {u.shape} != model output {self.output_shape}")
        acts = self.forward_all(x)
        cot = u
        grads = [None] * len(self.stages)
        for i in range(len(self.stages) - 1, -1, -1):
            st = self.stages[i]
            if st.param_count:
                grads[i] = st.param_vjp(acts[i], cot)
            else:
                grads[i] = np.zeros(0)
            cot = st.vjp(acts[i], cot)
        pgrad = np.concatenate(grads) if grads else np.zeros(0)
        return cot[0].copy(), pgrad

    def param_vjp(self, x, u) -> np.ndarray:
        """Gradient of <u, f(x)> with respect to the stage parameter vector."""
        return self.backward(x, u)[1]

    def stage_responses(self, x) -> list[np.ndarray]:
        """Outputs of the stages named by ``tap_indices``."""
        acts = self.forward_all(x)
        if self.tap_indices == (None,):
            return [acts[0]]
        return [acts[i + 1] for i in self.tap_indices]

    def linearize(self, x) -> "ChainLinearization":
        """Freeze the chain's derivative at x for repeated application."""
        return ChainLinearization(self, x)


class ChainLinearization:
    """Cached tangent and adjoint maps of a chain at a fixed base image.

    Skips per-call validation; inputs are trusted, which is what the inner
    loop of the eigensolver needs.
    """

    def __init__(self, chain: ModelChain, x):
        self.image = chain._check_image(x)
        acts = chain.forward_all(self.image)
        self._maps = [st.linearize(acts[i]) for i, st in enumerate(chain.stages)]
        self.input_shape = chain.image_shape
        self.output_shape = chain.output_shape

    def jvp(self, v: np.ndarray) -> np.ndarray:
        tan = v[np.newaxis]
        for fwd, _ in self._maps:
            tan = fwd(tan)
        return tan

    def vjp(self, u: np.ndarray) -> np.ndarray:
        cot = u
        for _, adj in reversed(self._maps):
            cot = adj(cot)
        return cot[0].copy()


def default_fd_step(x) -> float:
    """Central-difference step 1e-4 * max(1, ||x||_inf)."""
    x = np.asarray(x, dtype=np.float64)
    return 1e-4 * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)


def dense_jacobian_fd(chain: ModelChain, x, h: float | None = None) -> np.ndarray:
    """Dense (M, N) Jacobian by central finite differences, column by column.

    Independent of jvp/vjp by construction; guarded to N <= 4096 so a typo
    cannot allocate a huge matrix.
    """
    x = as_grid2(x, "x")
    n = x.size
    if n > 4096:
        raise SizeLimitError(f"dense Jacobian guard: N = {n} > 4096")
    if h is None:
        h = default_fd_step(x)
    m = chain.output_size
    jac = np.empty((m, n))
    flat = x.ravel()
    for j in range(n):
        bumped = flat.copy()
        bumped[j] = flat[j] + h
        f_plus = chain.forward(bumped.reshape(x.shape)).ravel()
        bumped[j] = flat[j] - h
        f_minus = chain.forward(bumped.reshape(x.shape)).ravel()
        jac[:, j] = (f_plus - f_minus) / (2.0 * h)
    return jac
