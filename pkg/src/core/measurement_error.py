"""
测量误差模块
成对重复测量的同方差插入式约化与异方差二元路线
"""

from typing import Callable, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .density import Grid, KernelSpec, MixingPMF, as_observations
from .exceptions import DegenerateDataError, InputError
from .mlp import MlpArchitecture
from .multivariate import fit_multivariate_neural_g, select_grid_bivariate
from .optimizer import TrainConfig, TrainResult
from .simulate import default_grid


# (平均后的观测, 核, 网格) -> MixingPMF
HomogeneousEstimator = Callable[[np.ndarray, KernelSpec, Grid], MixingPMF]


def _pairs(pairs) -> np.ndarray:
    return as_observations(KernelSpec.location_scale(2), pairs)


def plug_in_sigma2(pairs) -> float:
    """
    插入式误差方差: σ̂² = 0.5·(n−1)⁻¹·Σ(y*_i − ȳ*)², 其中y*_i = y_i1 − y_i2

    Args:
        pairs: (n, 2)成对观测, n ≥ 2

    Returns:
        σ̂² > 0
    """
    y = _pairs(pairs)
    if y.shape[0] < 2:
        raise InputError(f"插入式估计至少需要2对观测, 得到{y.shape[0]}")
    diff = y[:, 0] - y[:, 1]
    variance = float(np.var(diff, ddof=1))
    if not variance > 0:
        raise DegenerateDataError("成对差值的方差为零, 无法估计误差方差")
    return 0.5 * variance


def homogeneous_reduction(pairs, sigma2: Optional[float] = None) -> Tuple[np.ndarray, KernelSpec, float]:
    """
    同方差约化: ȳ_i | μ_i ~ N(μ_i, σ̂²/2)

    Args:
        pairs: (n, 2)成对观测
        sigma2: 已知的误差方差, 为None时用plug_in_sigma2

    Returns:
        (平均观测ȳ, N(√(σ̂²/2))核, σ̂²)
    """
    y = _pairs(pairs)
    s2 = plug_in_sigma2(y) if sigma2 is None else float(sigma2)
    if not s2 > 0:
        raise InputError(f"误差方差必须为正: {s2}")
    kernel = KernelSpec.normal(np.sqrt(s2 / 2.0))
    logger.info(f"同方差约化: n={y.shape[0]}, σ̂²={s2:.6f}, 平均观测的核尺度={kernel.sigma:.6f}")
    return y.mean(axis=1), kernel, s2


def fit_homogeneous(pairs, estimator: Union[str, HomogeneousEstimator] = "neuralg",
                    grid: Optional[Grid] = None, m: int = 100, sigma2: Optional[float] = None,
                    modeler=None, seed: Optional[int] = None) -> MixingPMF:
    """
    在同方差约化后的平均观测上拟合所选估计器

    Args:
        pairs: (n, 2)成对观测
        estimator: neuralg | npmle | efron, 或 (ȳ, 核, 网格) -> MixingPMF 的回调
        grid: 网格, 为None时由ȳ构建m点等距网格
        m: 网格点数
        sigma2: 已知的误差方差, 为None时用plug_in_sigma2
        modeler: 按名称拟合时使用的GModeler, 为None时使用默认配置
        seed: 随机种子

    Returns:
        μ的先验PMF
    """
    if isinstance(estimator, str):
        from .gmodeler import ESTIMATORS, GModeler

        if estimator not in ESTIMATORS:
            raise InputError(f"不支持的估计器: {estimator}, 可选: {', '.join(ESTIMATORS)}")
        modeler = GModeler() if modeler is None else modeler

        def fit(y, kernel, g):
            return modeler.fit_pmf(y, kernel, g, estimator, seed)["pmf"]
    elif callable(estimator):
        fit = estimator
    else:
        raise InputError(f"估计器必须是名称或回调, 得到 {type(estimator).__name__}")

    averaged, kernel, _ = homogeneous_reduction(pairs, sigma2)
    grid = default_grid(averaged, m) if grid is None else grid
    return fit(averaged, kernel, grid)


def sample_prior(pmf: MixingPMF, size: int = 5000, seed: int = 0) -> np.ndarray:
    """从估计的先验中抽样, 用于绘制密度"""
    if size < 1:
        raise InputError(f"抽样个数必须≥1: {size}")
    return pmf.sample(size, np.random.default_rng(seed))


def fit_heterogeneous(pairs, cfg: TrainConfig, m: int = 50, hidden_layers: int = 4,
                      hidden_width: int = 500, n_init: int = 10,
                      sigma2_floor: float = 1e-6, n_jobs: int = 1) -> TrainResult:
    """
    异方差路线: 每个对象有各自的(μ_i, σ_i²), 用二元位置-尺度neural-g估计联合先验

    Args:
        pairs: (n, 2)成对观测
        cfg: 训练配置(其seed同时用于k-means)
        m: 代表点个数
        hidden_layers: 隐藏层数
        hidden_width: 隐藏层宽度
        n_init: k-means重复初始化次数
        sigma2_floor: σ²坐标下限
        n_jobs: 构建核矩阵的线程数

    Returns:
        TrainResult
    """
    y = _pairs(pairs)
    grid = select_grid_bivariate(y, m=min(m, y.shape[0]), seed=cfg.seed, n_init=n_init,
                                 sigma2_floor=sigma2_floor)
    arch = MlpArchitecture(2, hidden_layers, hidden_width, grid.size)
    return fit_multivariate_neural_g(y, grid, arch, cfg, n_jobs=n_jobs, sigma2_floor=sigma2_floor)
