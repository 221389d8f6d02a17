"""distortlab: synthesize a differentiable image model's most- and
least-noticeable distortions, train perceptual models on distortion
ratings, and validate sensitivity predictions with simulated observers.
"""

__version__ = "0.1.0"

from .datasets import DatasetRecord, generate_synthetic_dataset, load_manifest
from .fisher import (
    EigenResult,
    FimOperator,
    SynthesisConfig,
    dense_eigenpairs,
    predicted_log_threshold_ratio,
    synthesize,
)
from .grids import as_grid2, as_grid3
from .kernels import KernelSpec, dog_kernel, gaussian_kernel
from .noise import NoiseStream, gaussian_noise
from .observer import (
    ObserverConfig,
    PsychometricFit,
    analytic_threshold,
    empirical_D,
    fit_psychometric,
    measure_threshold,
    simulate_2afc,
)
from .stages import ModelChain, Stage, dense_jacobian_fd
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    fit_stage_weights_nnls,
    nnls,
    objective_and_gradient,
    pearson,
    perceptual_distance,
    train,
)
from .zoo import (
    CnnParams,
    LgnParams,
    OnOffParams,
    build_from_theta,
    cnn_model,
    get_family,
    lg_model,
    lgg_model,
    ln_model,
    mse_model,
    onoff_model,
    random_cnn_params,
)

__all__ = [
    "__version__",
    "DatasetRecord",
    "generate_synthetic_dataset",
    "load_manifest",
    "EigenResult",
    "FimOperator",
    "SynthesisConfig",
    "dense_eigenpairs",
    "predicted_log_threshold_ratio",
    "synthesize",
    "as_grid2",
    "as_grid3",
    "KernelSpec",
    "dog_kernel",
    "gaussian_kernel",
    "NoiseStream",
    "gaussian_noise",
    "ObserverConfig",
    "PsychometricFit",
    "analytic_threshold",
    "empirical_D",
    "fit_psychometric",
    "measure_threshold",
    "simulate_2afc",
    "ModelChain",
    "Stage",
    "dense_jacobian_fd",
    "AdamState",
    "TrainConfig",
    "adam_step",
    "fit_stage_weights_nnls",
    "nnls",
    "objective_and_gradient",
    "pearson",
    "perceptual_distance",
    "train",
    "CnnParams",
    "LgnParams",
    "OnOffParams",
    "build_from_theta",
    "cnn_model",
    "get_family",
    "lg_model",
    "lgg_model",
    "ln_model",
    "mse_model",
    "onoff_model",
    "random_cnn_params",
]
