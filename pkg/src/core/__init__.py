"""核心模块初始化"""

from .config import Config
from .density import Grid, KernelSpec, KernelMatrix, MixingPMF, build_kernel_matrix, mixture_nll
from .mlp import MlpArchitecture, MlpModel, forward_pmf
from .optimizer import TrainConfig, TrainResult, train_neural_g
from .baselines import efron_fit, npmle_em, spline_basis
from .posterior import credible_interval, posterior_mean, posterior_pmf
from .gmodeler import GModeler

__all__ = [
    "Config",
    "Grid",
    "KernelSpec",
    "KernelMatrix",
    "MixingPMF",
    "build_kernel_matrix",
    "mixture_nll",
    "MlpArchitecture",
    "MlpModel",
    "forward_pmf",
    "TrainConfig",
    "TrainResult",
    "train_neural_g",
    "efron_fit",
    "npmle_em",
    "spline_basis",
    "credible_interval",
    "posterior_mean",
    "posterior_pmf",
    "GModeler",
]
