"""
后验推断模块
给定估计的先验, 计算网格上的后验PMF、后验均值、可信区间与经验覆盖率
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from loguru import logger

from .density import Grid, KernelMatrix, MixingPMF, PMF_TOL
from .exceptions import InputError, NumericalError


# 累积概率比较时的容差, 防止舍入使CDF略低于目标水平
CDF_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PosteriorPMF:
    """每个观测一行的后验PMF矩阵(n×m)"""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        if W.ndim != 2 or W.shape[1] != self.grid.size:
            raise InputError(f"后验矩阵形状 {W.shape} 与网格大小 {self.grid.size} 不一致")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise InputError("后验概率必须非负且有限")
        if np.any(np.abs(W.sum(axis=1) - 1.0) > PMF_TOL):
            raise InputError("后验矩阵存在和不为1的行")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def row(self, i: int) -> MixingPMF:
        return MixingPMF(self.grid, self.weights[i])


def posterior_pmf(F: KernelMatrix, prior: MixingPMF) -> PosteriorPMF:
    """
    贝叶斯公式: π(θ_j | y_i) ∝ f(y_i | θ_j)·π(θ_j)

    Args:
        F: 核矩阵
        prior: 先验PMF

    Returns:
        PosteriorPMF
    """
    if F.m != prior.size:
        raise InputError(f"核矩阵列数 {F.m} 与先验大小 {prior.size} 不一致")
    joint = F.values * prior.weights[None, :]
    norm = joint.sum(axis=1)
    bad = np.flatnonzero(~(norm > 0))
    if bad.size:
        raise NumericalError(f"第{bad[0]}个观测的后验归一化常数为零", index=int(bad[0]))
    return PosteriorPMF(prior.grid, joint / norm[:, None])


def posterior_mean(post: PosteriorPMF) -> np.ndarray:
    """
    后验均值 Ê_i = Σ_j θ_j·π(θ_j | y_i)

    一维网格返回长度n的向量; 多维网格返回(n, d)的逐坐标均值
    """
    means = post.weights @ post.grid.points
    return means[:, 0] if post.grid.dim == 1 else means


def credible_interval(post: PosteriorPMF, level: float = 0.95) -> np.ndarray:
    """
    等尾可信区间: lo为CDF首次达到(1−level)/2的网格点, hi为CDF首次达到1−(1−level)/2的网格点

    Args:
        post: 一维网格上的后验
        level: 可信水平, 取值(0, 1]

    Returns:
        (n, 2)数组, 每行为(lo, hi)
    """
    if post.grid.dim != 1:
        raise InputError("可信区间只适用于一维网格")
    if not 0 < level <= 1:
        raise InputError(f"可信水平必须在(0, 1]内: {level}")
    tail = (1.0 - level) / 2.0
    cdf = np.cumsum(post.weights, axis=1)
    lo_target = max(tail - CDF_TOL, np.finfo(float).tiny)
    hi_target = 1.0 - tail - CDF_TOL
    # 第一个达到目标的索引; 舍入可能导致末项略小于1, 故截断到m−1
    last = post.grid.size - 1
    lo_idx = np.minimum(np.argmax(cdf >= lo_target, axis=1), last)
    hi_reached = cdf >= hi_target
    hi_idx = np.where(hi_reached.any(axis=1), np.argmax(hi_reached, axis=1), last)
    theta = post.grid.values
    return np.column_stack([theta[lo_idx], theta[hi_idx]])


def empirical_coverage(true_thetas: Sequence[float], intervals) -> float:
    """真实θ落在[lo, hi]内的比例"""
    theta = np.asarray(true_thetas, dtype=np.float64).reshape(-1)
    bounds = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if theta.shape[0] != bounds.shape[0]:
        raise InputError(f"真实θ个数 {theta.shape[0]} 与区间个数 {bounds.shape[0]} 不一致")
    if theta.shape[0] == 0:
        raise InputError("覆盖率计算需要至少一个观测")
    covered = (bounds[:, 0] <= theta) & (theta <= bounds[:, 1])
    rate = float(covered.mean())
    logger.debug(f"经验覆盖率: {rate:.4f} ({int(covered.sum())}/{theta.shape[0]})")
    return rate


def summarize(post: PosteriorPMF, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
    """后验均值与可信区间"""
    return posterior_mean(post), credible_interval(post, level)
