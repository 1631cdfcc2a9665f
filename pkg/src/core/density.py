"""
密度核心模块
网格、混合概率质量函数(PMF)、似然核、核矩阵、混合负对数似然以及softmax平移构造
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from loguru import logger
from scipy import stats

from .exceptions import InputError, KernelSupportError, NumericalError


PMF_TOL = 1e-10

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class Grid:
    """
    有限支撑网格Θ_m

    points为(m, d)数组;d=1时要求严格递增,任意维度不允许重复点
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise InputError(f"网格必须非空, 得到形状 {np.shape(self.points)}")
        if not np.all(np.isfinite(pts)):
            raise InputError("网格坐标必须全部有限")
        if pts.shape[1] == 1:
            if pts.shape[0] > 1 and not np.all(np.diff(pts[:, 0]) > 0):
                raise InputError("一维网格必须严格递增")
        elif np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise InputError("网格中存在重复点")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lower: float, upper: float, m: int) -> "Grid":
        """构建[lower, upper]上m个等距点的一维网格"""
        return cls(np.linspace(lower, upper, m))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def values(self) -> np.ndarray:
        """一维网格的坐标向量"""
        if self.dim != 1:
            raise InputError("values仅适用于一维网格")
        return self.points[:, 0]

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"Grid(m={self.size}, d={self.dim})"


@dataclass(frozen=True, eq=False)
class MixingPMF:
    """网格上的混合概率向量: 非负且和为1(误差1e-10以内)"""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != self.grid.size:
            raise InputError(f"权重长度 {w.shape[0]} 与网格大小 {self.grid.size} 不一致")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("PMF权重必须非负且有限")
        if abs(w.sum() - 1.0) > PMF_TOL:
            raise InputError(f"PMF权重之和为 {w.sum():.12g}, 不等于1")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, grid: Grid, weights: ArrayLike) -> "MixingPMF":
        """对非负权重归一化后构建PMF"""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise InputError("权重之和必须为正")
        return cls(grid, w / total)

    @classmethod
    def uniform(cls, grid: Grid) -> "MixingPMF":
        return cls(grid, np.full(grid.size, 1.0 / grid.size))

    @classmethod
    def point_mass(cls, grid: Grid, index: int) -> "MixingPMF":
        w = np.zeros(grid.size)
        w[index] = 1.0
        return cls(grid, w)

    @property
    def size(self) -> int:
        return self.grid.size

    def mean(self) -> np.ndarray:
        """各坐标的期望"""
        return self.weights @ self.grid.points

    def cdf(self) -> np.ndarray:
        """一维PMF在网格点上的右连续累积分布"""
        if self.grid.dim != 1:
            raise InputError("cdf仅适用于一维网格")
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        return cdf

    def marginal(self, axis: int) -> "MixingPMF":
        """
        多元PMF在某一坐标上的边缘分布

        Args:
            axis: 坐标序号

        Returns:
            该坐标取值网格上的一维PMF
        """
        coords = self.grid.points[:, axis]
        values, inverse = np.unique(coords, return_inverse=True)
        probs = np.zeros(values.shape[0])
        np.add.at(probs, inverse, self.weights)
        return MixingPMF.normalized(Grid(values), probs)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """从PMF抽样,返回(size, d)数组(d=1时为向量)"""
        idx = rng.choice(self.size, size=size, p=self.weights)
        draws = self.grid.points[idx]
        return draws[:, 0] if self.grid.dim == 1 else draws

    def __repr__(self) -> str:
        return f"MixingPMF(m={self.size}, d={self.grid.dim})"


@dataclass(frozen=True)
class KernelSpec:
    """
    似然核族及其固定的冗余参数

    family: normal(σ) | poisson | lognormal(σ) | location_scale(r个重复观测, θ=(μ, σ²))
    """

    family: str
    sigma: float = 1.0
    replicates: int = 2

    FAMILIES = ("normal", "poisson", "lognormal", "location_scale")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise InputError(f"不支持的核族: {self.family}, 可选: {', '.join(self.FAMILIES)}")
        if self.family in ("normal", "lognormal") and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InputError(f"尺度参数必须为正: sigma={self.sigma}")
        if self.family == "location_scale" and self.replicates < 1:
            raise InputError(f"重复观测次数必须为正: r={self.replicates}")

    @classmethod
    def normal(cls, sigma: float = 1.0) -> "KernelSpec":
        return cls("normal", sigma=float(sigma))

    @classmethod
    def poisson(cls) -> "KernelSpec":
        return cls("poisson")

    @classmethod
    def lognormal(cls, sigma: float) -> "KernelSpec":
        return cls("lognormal", sigma=float(sigma))

    @classmethod
    def location_scale(cls, replicates: int = 2) -> "KernelSpec":
        return cls("location_scale", replicates=int(replicates))

    @property
    def param_dim(self) -> int:
        return 2 if self.family == "location_scale" else 1

    @property
    def obs_dim(self) -> int:
        return self.replicates if self.family == "location_scale" else 1

    @property
    def scale(self) -> float:
        """核在参数空间上的尺度,用于求积区间扩展"""
        return self.sigma if self.family in ("normal", "lognormal") else 0.0


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """n×m核矩阵, values[i][j] = f(y_i | θ_j)"""

    values: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise InputError(f"核矩阵必须为二维, 得到形状 {vals.shape}")
        if self.check:
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise InputError("核矩阵元素必须非负且有限")
            _check_row_support(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def take(self, rows: np.ndarray) -> "KernelMatrix":
        """按行索引取子矩阵(已验证的矩阵的子集无需重新验证)"""
        return KernelMatrix(self.values[np.asarray(rows)], check=False)


def as_observations(spec: KernelSpec, data: ArrayLike) -> np.ndarray:
    """
    把观测整理为数组并检查与核族的取值域是否相符

    Args:
        spec: 核规格
        data: 观测(单变量为长度n的向量,location_scale为(n, r)矩阵)

    Returns:
        单变量时为(n,)数组, location_scale时为(n, r)数组
    """
    y = np.asarray(data, dtype=np.float64)
    if spec.family == "location_scale":
        if y.ndim == 1 and spec.replicates == 1:
            y = y.reshape(-1, 1)
        if y.ndim != 2 or y.shape[1] != spec.replicates:
            raise InputError(f"location_scale核需要(n, {spec.replicates})的观测矩阵, 得到 {y.shape}")
    else:
        y = y.reshape(-1)
    if y.shape[0] == 0:
        raise InputError("观测不能为空")
    if not np.all(np.isfinite(y)):
        raise InputError("观测中存在非有限值")
    if spec.family == "poisson":
        bad = np.flatnonzero((y < 0) | (y != np.floor(y)))
        if bad.size:
            raise InputError(f"Poisson观测必须为非负整数, 第{bad[0]}个观测为 {y[bad[0]]}")
    if spec.family == "lognormal":
        bad = np.flatnonzero(y <= 0)
        if bad.size:
            raise InputError(f"LogNormal观测必须为正, 第{bad[0]}个观测为 {y[bad[0]]}")
    return y


def _check_params(spec: KernelSpec, theta: np.ndarray):
    """检查网格参数在核族的取值域内"""
    if theta.shape[1] != spec.param_dim:
        raise InputError(f"网格维度 {theta.shape[1]} 与核参数维度 {spec.param_dim} 不一致")
    if spec.family == "poisson" and np.any(theta[:, 0] <= 0):
        raise InputError("Poisson核的网格点必须为正")
    if spec.family == "location_scale" and np.any(theta[:, 1] <= 0):
        raise InputError("location_scale核的方差坐标必须为正")


def log_kernel(spec: KernelSpec, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """
    在对数域计算核矩阵 log f(y_i | θ_j)

    Args:
        spec: 核规格
        y: as_observations整理后的观测
        theta: (m, d)网格点

    Returns:
        (n, m)对数密度矩阵
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta.reshape(-1, 1)
    _check_params(spec, theta)

    if spec.family == "normal":
        return stats.norm.logpdf(y[:, None], loc=theta[None, :, 0], scale=spec.sigma)
    if spec.family == "poisson":
        return stats.poisson.logpmf(y[:, None], theta[None, :, 0])
    if spec.family == "lognormal":
        log_y = np.log(y)[:, None]
        return stats.norm.logpdf(log_y, loc=theta[None, :, 0], scale=spec.sigma) - log_y
    # location_scale: 各重复观测独立同分布于N(μ, σ²)
    mu = theta[None, :, 0]
    sd = np.sqrt(theta[None, :, 1])
    out = np.zeros((y.shape[0], theta.shape[0]))
    for r in range(y.shape[1]):
        out += stats.norm.logpdf(y[:, r][:, None], loc=mu, scale=sd)
    return out


def kernel_density(spec: KernelSpec, y, theta) -> float:
    """
    计算单个核密度f(y | θ)

    Args:
        spec: 核规格
        y: 单个观测(location_scale为长度r的向量)
        theta: 单个网格点(location_scale为(μ, σ²))

    Returns:
        非负有限的密度值
    """
    obs = as_observations(spec, np.asarray(y, dtype=np.float64).reshape(1, -1)
                          if spec.family == "location_scale" else [y])
    point = np.asarray(theta, dtype=np.float64).reshape(1, -1)
    return float(np.exp(log_kernel(spec, obs, point)[0, 0]))


def _check_row_support(values: np.ndarray, offset: int = 0):
    """核支撑条件: 每一行至少有一个严格为正的元素"""
    empty = np.flatnonzero(~np.any(values > 0, axis=1))
    if empty.size:
        index = int(empty[0]) + offset
        raise KernelSupportError(
            f"违反核支撑条件: 第{index}个观测在所有网格点上的核密度均为零", index=index)


def build_kernel_matrix(spec: KernelSpec, data: ArrayLike, grid: Grid,
                        n_jobs: int = 1, chunk_size: int = 2048) -> KernelMatrix:
    """
    构建n×m核矩阵

    Args:
        spec: 核规格
        data: 观测
        grid: 网格
        n_jobs: 并行线程数(每个分块只由一个线程写入,结果与串行一致)
        chunk_size: 行分块大小

    Returns:
        KernelMatrix
    """
    y = as_observations(spec, data)
    if grid.dim != spec.param_dim:
        raise InputError(f"网格维度 {grid.dim} 与核参数维度 {spec.param_dim} 不一致")

    n = y.shape[0]
    values = np.empty((n, grid.size))
    starts = list(range(0, n, chunk_size))

    def fill(start: int):
        stop = min(start + chunk_size, n)
        values[start:stop] = np.exp(log_kernel(spec, y[start:stop], grid.points))

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            list(executor.map(fill, starts))
    else:
        for start in starts:
            fill(start)

    if not np.all(np.isfinite(values)):
        raise InputError("核矩阵中出现非有限值")
    _check_row_support(values)
    logger.debug(f"核矩阵构建完成: n={n}, m={grid.size}, 核族={spec.family}")
    return KernelMatrix(values, check=False)


def row_mixtures(F: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """逐行混合似然 Σ_j F[i][j]·w_j"""
    return F @ weights


def mixture_nll(F: KernelMatrix, pmf: MixingPMF) -> float:
    """
    混合负对数似然 −(1/n)·Σ_i log(Σ_j F[i][j]·w_j)

    Args:
        F: 核矩阵
        pmf: 网格上的混合PMF

    Returns:
        负对数似然
    """
    if F.m != pmf.size:
        raise InputError(f"核矩阵列数 {F.m} 与PMF大小 {pmf.size} 不一致")
    mix = row_mixtures(F.values, pmf.weights)
    bad = np.flatnonzero(~(mix > 0) | ~np.isfinite(mix))
    if bad.size:
        raise NumericalError(f"第{bad[0]}个观测的混合似然为零, 损失非有限", index=int(bad[0]))
    return float(-np.sum(np.log(mix)) / mix.shape[0])


def softmax(x: ArrayLike) -> np.ndarray:
    """减去最大值后计算softmax,避免溢出"""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("softmax输入必须有限")
    z = np.exp(x - x.max())
    return z / z.sum()


def softmax_shift_construct(p: MixingPMF, eps: float) -> MixingPMF:
    """
    softmax平移构造: 取h_ε = log(2m·p/ε + 1), 返回softmax(h_ε)

    结果与p的上确界误差不超过1/(1 + 2/ε); p中的零元素给出h=0

    Args:
        p: 目标PMF
        eps: 精度参数, 必须为正

    Returns:
        softmax(h_ε)构成的PMF
    """
    if not eps > 0:
        raise InputError(f"eps必须为正: {eps}")
    h = np.log1p(2.0 * p.size * p.weights / eps)
    return MixingPMF.normalized(p.grid, softmax(h))


def shift_construct_bound(eps: float) -> float:
    """softmax平移构造的误差上界 1/(1 + 2/ε)"""
    return 1.0 / (1.0 + 2.0 / eps)


def loss_proximity_bound(F: KernelMatrix, p: MixingPMF, q: MixingPMF) -> float:
    """
    两个PMF损失差的上界 (m·c2/c1)·‖p − q‖∞

    c1为两者逐行混合似然的最小值, c2为核矩阵的最大元素

    Args:
        F: 核矩阵
        p: PMF
        q: PMF

    Returns:
        |ℓ(p) − ℓ(q)|的上界
    """
    mix_p = row_mixtures(F.values, p.weights)
    mix_q = row_mixtures(F.values, q.weights)
    c1 = float(min(mix_p.min(), mix_q.min()))
    if c1 <= 0:
        raise NumericalError("混合似然存在零值, 上界无定义")
    c2 = float(F.values.max())
    return F.m * c2 / c1 * float(np.max(np.abs(p.weights - q.weights)))
