"""
多元neural-g模块
二元正态位置-尺度模型的代表点网格选择与d输入网络拟合
"""

from typing import Optional, Tuple

import numpy as np
from loguru import logger
from sklearn.cluster import KMeans

from .density import Grid, KernelSpec, MixingPMF, as_observations
from .exceptions import InputError
from .mlp import MlpArchitecture
from .optimizer import TrainConfig, TrainResult, train_neural_g


def pair_mles(pairs, sigma2_floor: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    每个观测对的条件MLE: μ̂ = (y1 + y2)/2, σ̂² = (y1 − y2)²/2(下限sigma2_floor)

    Returns:
        (μ̂, σ̂²)
    """
    y = as_observations(KernelSpec.location_scale(2), pairs)
    mu = y.mean(axis=1)
    sigma2 = np.maximum((y[:, 0] - y[:, 1]) ** 2 / 2.0, sigma2_floor)
    return mu, sigma2


def _feature_scale(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    center = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale <= 0] = 1.0
    return center, scale


def _mle_features(pairs, sigma2_floor: float) -> np.ndarray:
    mu, sigma2 = pair_mles(pairs, sigma2_floor)
    return np.column_stack([mu, np.log(sigma2)])


def mle_feature_stats(pairs, sigma2_floor: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """(μ̂, log σ̂²)的均值与标准差, 用于标准化网络输入和网格坐标"""
    return _feature_scale(_mle_features(pairs, sigma2_floor))


def select_grid_bivariate(pairs, m: int = 50, seed: int = 0, n_init: int = 10,
                          sigma2_floor: float = 1e-6) -> Grid:
    """
    选择(μ, σ²)代表点网格: 对标准化的(μ̂, log σ̂²)做带种子的k-means, 把聚类中心映射回原尺度

    Args:
        pairs: (n, 2)成对观测
        m: 代表点个数, 不超过n
        seed: k-means随机种子
        n_init: k-means重复初始化次数
        sigma2_floor: σ²坐标下限

    Returns:
        (μ, σ²)二维网格
    """
    features = _mle_features(pairs, sigma2_floor)
    n = features.shape[0]
    if m < 1 or m > n:
        raise InputError(f"代表点个数必须满足1 ≤ m ≤ n: m={m}, n={n}")

    # 按字典序排序, 使结果与观测顺序无关
    features = features[np.lexsort((features[:, 1], features[:, 0]))]
    center, scale = _feature_scale(features)
    Z = (features - center) / scale

    distinct = np.unique(Z, axis=0).shape[0]
    if distinct == 1:
        logger.warning(f"所有观测对的MLE相同, 返回单点网格(请求m={m})")
        return Grid(np.array([[features[0, 0], np.exp(features[0, 1])]]))
    if distinct < m:
        logger.warning(f"不同的MLE只有{distinct}个, 代表点个数从{m}减为{distinct}")
        m = distinct

    kmeans = KMeans(n_clusters=m, n_init=n_init, random_state=seed).fit(Z)
    centers = kmeans.cluster_centers_ * scale + center
    points = np.column_stack([centers[:, 0], np.maximum(np.exp(centers[:, 1]), sigma2_floor)])
    points = np.unique(points, axis=0)
    logger.info(f"二元网格选择完成: n={n}, m={points.shape[0]}")
    return Grid(points)


def fit_multivariate_neural_g(pairs, grid: Grid, arch: MlpArchitecture, cfg: TrainConfig,
                              n_jobs: int = 1, sigma2_floor: float = 1e-6) -> TrainResult:
    """
    在二元网格上训练neural-g, 核为两次独立N(μ, σ²)观测的乘积

    网络输入为用(μ̂, log σ̂²)的均值与标准差标准化后的网格坐标

    Args:
        pairs: (n, 2)成对观测
        grid: (μ, σ²)网格
        arch: 输入维度为2的网络结构
        cfg: 训练配置
        n_jobs: 构建核矩阵的线程数
        sigma2_floor: σ̂²下限

    Returns:
        TrainResult
    """
    if arch.input_dim != 2 or grid.dim != 2:
        raise InputError(f"二元拟合需要d=2, 得到网络d={arch.input_dim}, 网格d={grid.dim}")
    return train_neural_g(pairs, KernelSpec.location_scale(2), grid, arch, cfg, n_jobs=n_jobs,
                          input_stats=mle_feature_stats(pairs, sigma2_floor))


def grid_feature_stats(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """网格(μ, log σ²)坐标的均值与标准差"""
    return _feature_scale(np.column_stack([grid.points[:, 0], np.log(grid.points[:, 1])]))


def standardized_coordinates(points: np.ndarray,
                             stats: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """按给定(均值, 标准差)标准化(μ, log σ²)坐标"""
    center, scale = stats
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return (np.column_stack([pts[:, 0], np.log(pts[:, 1])]) - center) / scale


def mass_near_atoms(pmf: MixingPMF, atoms, radius: float = 0.3,
                    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """
    每个原子在标准化半径radius内的PMF质量(网格点归入最近的原子)

    Args:
        pmf: 二元PMF
        atoms: (k, 2)原子(μ, σ²)
        radius: 标准化距离半径
        stats: 标准化所用的(均值, 标准差), 通常取mle_feature_stats(观测); 默认为pmf网格的统计量

    Returns:
        长度k的质量向量
    """
    stats = grid_feature_stats(pmf.grid) if stats is None else stats
    Z = standardized_coordinates(pmf.grid.points, stats)
    A = standardized_coordinates(atoms, stats)
    dist = np.linalg.norm(Z[:, None, :] - A[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    within = dist[np.arange(dist.shape[0]), nearest] <= radius
    mass = np.zeros(A.shape[0])
    np.add.at(mass, nearest[within], pmf.weights[within])
    return mass
