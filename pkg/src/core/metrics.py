"""
评估指标模块
真实先验对象、Wasserstein-1距离、贝叶斯估计的MAE、χ²-MAE与K折交叉验证预测对数似然
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import stats
from scipy.special import logsumexp

from .density import Grid, KernelSpec, MixingPMF, as_observations, log_kernel
from .exceptions import InputError, NumericalError


# 估计器回调: (训练数据, 网格) -> MixingPMF
Estimator = Callable[[np.ndarray, Grid], MixingPMF]


@dataclass(frozen=True, eq=False)
class TruePrior:
    """
    真实先验

    kind为continuous(scipy冻结分布的加权混合)、atomic(有限个原子)或nig(正态-逆伽马)
    """

    name: str
    kind: str
    weights: np.ndarray
    components: Tuple = ()
    atoms: Optional[np.ndarray] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("continuous", "atomic", "nig"):
            raise InputError(f"未知的先验类型: {self.kind}")
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise InputError(f"先验{self.name}的混合权重必须非负且和为1")
        object.__setattr__(self, "weights", w)
        if self.kind == "atomic":
            atoms = np.asarray(self.atoms, dtype=np.float64)
            if atoms.ndim == 1:
                atoms = atoms.reshape(-1, 1)
            if atoms.shape[0] != w.shape[0]:
                raise InputError("原子个数与权重个数不一致")
            object.__setattr__(self, "atoms", atoms)
        elif self.kind == "continuous" and len(self.components) != w.shape[0]:
            raise InputError("混合分量个数与权重个数不一致")

    @classmethod
    def mixture(cls, name: str, components: Sequence, weights: Sequence[float]) -> "TruePrior":
        return cls(name, "continuous", np.asarray(weights, dtype=np.float64), tuple(components))

    @classmethod
    def single(cls, name: str, component) -> "TruePrior":
        return cls(name, "continuous", np.ones(1), (component,))

    @classmethod
    def atomic(cls, name: str, atoms, weights: Sequence[float]) -> "TruePrior":
        return cls(name, "atomic", np.asarray(weights, dtype=np.float64), atoms=np.asarray(atoms))

    @classmethod
    def nig(cls, mu0: float = 1.0, lam: float = 1.0, shape: float = 2.0, scale: float = 0.5) -> "TruePrior":
        """σ² ~ InvGamma(shape, scale), μ | σ² ~ N(mu0, σ²/lam)"""
        return cls("bi_nig", "nig", np.ones(1),
                   params={"mu0": mu0, "lam": lam, "shape": shape, "scale": scale})

    @classmethod
    def from_pmf(cls, pmf: MixingPMF, name: str = "pmf") -> "TruePrior":
        """把网格PMF视为原子先验, 用于PMF之间的距离"""
        keep = pmf.weights > 0
        return cls.atomic(name, pmf.grid.points[keep], pmf.weights[keep] / pmf.weights[keep].sum())

    @property
    def dim(self) -> int:
        if self.kind == "atomic":
            return self.atoms.shape[1]
        return 2 if self.kind == "nig" else 1

    def _require_univariate(self):
        if self.dim != 1:
            raise InputError(f"先验{self.name}不是一维分布")

    def cdf(self, x) -> np.ndarray:
        """一维先验的累积分布函数"""
        self._require_univariate()
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "atomic":
            order = np.argsort(self.atoms[:, 0], kind="stable")
            points = self.atoms[order, 0]
            cum = np.concatenate([[0.0], np.cumsum(self.weights[order])])
            cum[-1] = 1.0
            return cum[np.searchsorted(points, x, side="right")]
        return sum(w * comp.cdf(x) for w, comp in zip(self.weights, self.components))

    def pdf(self, x) -> np.ndarray:
        """连续一维先验的密度"""
        self._require_univariate()
        if self.kind != "continuous":
            raise InputError(f"先验{self.name}没有密度函数")
        x = np.asarray(x, dtype=np.float64)
        return sum(w * comp.pdf(x) for w, comp in zip(self.weights, self.components))

    def support_bounds(self, mass: float = 1e-10) -> Tuple[float, float]:
        """
        一维先验的支撑区间; 无界的一侧用尾部概率为mass/2的分位数截断

        Returns:
            (lo, hi)
        """
        self._require_univariate()
        if self.kind == "atomic":
            return float(self.atoms[:, 0].min()), float(self.atoms[:, 0].max())
        lows, highs = [], []
        for comp in self.components:
            lo, hi = comp.ppf(0.0), comp.ppf(1.0)
            lows.append(lo if np.isfinite(lo) else comp.ppf(mass / 2.0))
            highs.append(hi if np.isfinite(hi) else comp.ppf(1.0 - mass / 2.0))
        return float(min(lows)), float(max(highs))

    def is_bounded(self) -> Tuple[bool, bool]:
        """(下端有界, 上端有界)"""
        if self.kind == "atomic":
            return True, True
        return (all(np.isfinite(c.ppf(0.0)) for c in self.components),
                all(np.isfinite(c.ppf(1.0)) for c in self.components))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """
        从先验抽样, 连续分量用逆CDF变换

        Returns:
            一维先验为(size,)数组, 二维先验为(size, 2)数组
        """
        if self.kind == "atomic":
            draws = self.atoms[rng.choice(self.weights.shape[0], size=size, p=self.weights)]
            return draws[:, 0] if self.dim == 1 else draws
        if self.kind == "nig":
            p = self.params
            sigma2 = stats.invgamma.ppf(rng.uniform(size=size), a=p["shape"], scale=p["scale"])
            mu = p["mu0"] + np.sqrt(sigma2 / p["lam"]) * stats.norm.ppf(rng.uniform(size=size))
            return np.column_stack([mu, sigma2])
        if len(self.components) == 1:
            return self.components[0].ppf(rng.uniform(size=size))
        labels = rng.choice(len(self.components), size=size, p=self.weights)
        u = rng.uniform(size=size)
        out = np.empty(size)
        for k, comp in enumerate(self.components):
            mask = labels == k
            out[mask] = comp.ppf(u[mask])
        return out

    def mean(self) -> np.ndarray:
        """先验均值(各坐标)"""
        if self.kind == "atomic":
            return self.weights @ self.atoms
        if self.kind == "nig":
            p = self.params
            return np.array([p["mu0"], p["scale"] / (p["shape"] - 1.0)])
        return np.array([sum(w * comp.mean() for w, comp in zip(self.weights, self.components))])


@dataclass(frozen=True)
class FoldPlan:
    """K折划分, folds为互不相交且覆盖0..n−1的索引集"""

    K: int
    folds: Tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return int(sum(len(f) for f in self.folds))

    def train_indices(self, k: int) -> np.ndarray:
        """第k折的训练集; K=1时在全部数据上拟合并评分"""
        if self.K == 1:
            return np.sort(self.folds[0])
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != k]))

    def test_indices(self, k: int) -> np.ndarray:
        return np.sort(self.folds[k])


def make_fold_plan(n: int, K: int, seed: int = 0) -> FoldPlan:
    """
    带种子的随机打乱后切分为K个连续块, 各折大小相差不超过1

    Args:
        n: 样本量
        K: 折数, 1 ≤ K ≤ n
        seed: 随机种子

    Returns:
        FoldPlan
    """
    if not 1 <= K <= n:
        raise InputError(f"折数必须满足1 ≤ K ≤ n: K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldPlan(K, tuple(np.array_split(perm, K)))


def integration_grid(est: MixingPMF, truth: TruePrior, points: int = 2001,
                     margin: float = 1.0) -> np.ndarray:
    """W1积分网格: [两者支撑的最小值 − margin, 最大值 + margin]上的等距点"""
    if points < 2:
        raise InputError(f"积分网格点数必须≥2: {points}")
    lo, hi = truth.support_bounds()
    theta = est.grid.values
    return np.linspace(min(lo, theta[0]) - margin, max(hi, theta[-1]) + margin, points)


def w1_distance(est: MixingPMF, truth: TruePrior, grid: Optional[np.ndarray] = None,
                points: int = 2001, margin: float = 1.0) -> float:
    """
    Wasserstein-1距离 ∫|F_true(x) − F_est(x)|dx, 在积分网格上取左黎曼和

    Args:
        est: 估计的一维PMF
        truth: 真实先验
        grid: 积分网格, 为None时由integration_grid生成
        points: 积分网格点数
        margin: 积分区间扩展宽度

    Returns:
        W1距离
    """
    if est.grid.dim != 1:
        raise InputError("W1距离只适用于一维PMF")
    x = integration_grid(est, truth, points, margin) if grid is None else np.asarray(grid, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2 or np.any(np.diff(x) <= 0):
        raise InputError("积分网格必须是严格递增的一维数组")
    cdf_est = np.concatenate([[0.0], est.cdf()])[np.searchsorted(est.grid.values, x[:-1], side="right")]
    cdf_true = truth.cdf(x[:-1])
    return float(np.sum(np.abs(cdf_true - cdf_est) * np.diff(x)))


def _quadrature_nodes(truth: TruePrior, spec: KernelSpec, points: int,
                      mass: float) -> Tuple[np.ndarray, np.ndarray]:
    """梯形求积节点与log权重(含先验密度); 捕获的先验质量不足时自动加宽"""
    lo, hi = truth.support_bounds(mass)
    lower_bounded, upper_bounded = truth.is_bounded()
    extend = 6.0 * spec.scale
    if not lower_bounded:
        lo -= extend
    if not upper_bounded:
        hi += extend
    for _ in range(10):
        captured = float(truth.cdf(hi) - truth.cdf(lo))
        if captured >= 1.0 - mass:
            break
        width = hi - lo
        lo = lo if lower_bounded else lo - width
        hi = hi if upper_bounded else hi + width
    else:
        raise NumericalError(f"求积区间无法覆盖先验{truth.name}的1−{mass}质量")
    nodes = np.linspace(lo, hi, points)
    h = nodes[1] - nodes[0]
    trap = np.full(points, h)
    trap[[0, -1]] = h / 2.0
    with np.errstate(divide="ignore"):
        log_w = np.log(trap) + np.log(truth.pdf(nodes))
    return nodes, log_w


def true_posterior_means(truth: TruePrior, spec: KernelSpec, data, points: int = 10001,
                         mass: float = 1e-8, chunk_size: int = 256) -> np.ndarray:
    """
    真实先验下的后验均值E[θ | y_i]

    原子先验精确求和; 连续一维先验在支撑区间(无界时向外扩展6个核尺度)上用梯形求积

    Args:
        truth: 真实先验
        spec: 核规格
        data: 观测
        points: 求积点数
        mass: 允许遗漏的先验质量
        chunk_size: 分块行数

    Returns:
        一维先验为(n,)数组, 二维原子先验为(n, 2)数组
    """
    y = as_observations(spec, data)
    if truth.kind == "atomic":
        nodes = truth.atoms
        with np.errstate(divide="ignore"):
            log_w = np.log(truth.weights)
    elif truth.kind == "continuous":
        nodes_1d, log_w = _quadrature_nodes(truth, spec, points, mass)
        if spec.family == "poisson":
            keep = nodes_1d > 0
            nodes_1d, log_w = nodes_1d[keep], log_w[keep]
        nodes = nodes_1d.reshape(-1, 1)
    else:
        raise InputError(f"先验{truth.name}的后验均值需要二维求积, 暂不支持")

    if nodes.shape[1] != spec.param_dim:
        raise InputError(f"先验维度 {nodes.shape[1]} 与核参数维度 {spec.param_dim} 不一致")

    out = np.empty((y.shape[0], nodes.shape[1]))
    for start in range(0, y.shape[0], chunk_size):
        block = log_kernel(spec, y[start:start + chunk_size], nodes) + log_w[None, :]
        norm = logsumexp(block, axis=1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise NumericalError("真实后验的归一化常数为零")
        out[start:start + chunk_size] = np.exp(block - norm) @ nodes
    return out[:, 0] if nodes.shape[1] == 1 else out


def bayes_mae(est_means, true_means) -> float:
    """(1/n)·Σ|Ê_i − E_i|"""
    est = np.asarray(est_means, dtype=np.float64)
    true = np.asarray(true_means, dtype=np.float64)
    if est.shape != true.shape:
        raise InputError(f"长度不一致: {est.shape} vs {true.shape}")
    return float(np.mean(np.abs(est - true)))


def count_histogram(counts) -> Tuple[np.ndarray, np.ndarray]:
    """计数数据的观测频数表 (取值c, 频数O_c)"""
    values, freq = np.unique(as_observations(KernelSpec.poisson(), counts), return_counts=True)
    return values, freq.astype(np.float64)


def chi2_mae(counts, est: MixingPMF, spec: KernelSpec, n_k: Optional[float] = None) -> float:
    """
    Σ_c |O_c − n_k·Σ_j f(c | θ_j)·ŵ_j|, 只对观测到的计数值c求和

    Args:
        counts: 计数观测(原始数据)
        est: 估计的PMF
        spec: 计数核(Poisson)
        n_k: 期望频数的样本量, 默认为观测个数

    Returns:
        绝对偏差之和
    """
    if spec.family != "poisson":
        raise InputError(f"chi2_mae只适用于计数核, 得到 {spec.family}")
    values, observed = count_histogram(counts)
    n_k = float(observed.sum()) if n_k is None else float(n_k)
    expected = n_k * (np.exp(log_kernel(spec, values, est.grid.points)) @ est.weights)
    return float(np.sum(np.abs(observed - expected)))


def fit_folds(data, grid: Grid, estimator: Estimator, plan: FoldPlan,
              n_jobs: int = 1) -> List[MixingPMF]:
    """在每一折的训练集上拟合估计器"""
    y = np.asarray(data)
    if y.shape[0] != plan.n:
        raise InputError(f"数据量 {y.shape[0]} 与折划分的样本量 {plan.n} 不一致")

    def fit(k: int) -> MixingPMF:
        logger.debug(f"拟合第{k + 1}/{plan.K}折")
        return estimator(y[plan.train_indices(k)], grid)

    if n_jobs > 1 and plan.K > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            return list(executor.map(fit, range(plan.K)))
    return [fit(k) for k in range(plan.K)]


def _pll_fold(y: np.ndarray, test: np.ndarray, spec: KernelSpec, pmf: MixingPMF) -> float:
    log_f = log_kernel(spec, y[test], pmf.grid.points)
    with np.errstate(divide="ignore"):
        log_pred = logsumexp(log_f + np.log(pmf.weights)[None, :], axis=1)
    bad = np.flatnonzero(~np.isfinite(log_pred))
    if bad.size:
        index = int(test[bad[0]])
        raise NumericalError(f"第{index}个留出观测的预测密度为零", index=index)
    return float(-2.0 * np.sum(log_pred))


def cv_pll(data, spec: KernelSpec, grid: Grid, estimator: Estimator, plan: FoldPlan,
           n_jobs: int = 1, pmfs: Optional[List[MixingPMF]] = None) -> float:
    """
    K折交叉验证预测对数似然 (1/K)·Σ_k Σ_{i∈I_k} −2·log(Σ_j f(y_i | θ_j)·ŵ_j^(−k))

    Args:
        data: 观测
        spec: 核规格
        grid: 网格(各折共用)
        estimator: 估计器回调
        plan: 折划分
        n_jobs: 并行拟合的线程数
        pmfs: 已拟合的各折PMF, 提供时跳过拟合

    Returns:
        PLL
    """
    y = as_observations(spec, data)
    if pmfs is None:
        pmfs = fit_folds(y, grid, estimator, plan, n_jobs)
    total = sum(_pll_fold(y, plan.test_indices(k), spec, pmfs[k]) for k in range(plan.K))
    return total / plan.K


def cv_chi2_mae(data, spec: KernelSpec, grid: Grid, estimator: Estimator, plan: FoldPlan,
                n_jobs: int = 1, pmfs: Optional[List[MixingPMF]] = None) -> float:
    """各折留出数据上χ²-MAE的平均"""
    y = as_observations(spec, data)
    if pmfs is None:
        pmfs = fit_folds(y, grid, estimator, plan, n_jobs)
    scores = []
    for k in range(plan.K):
        test = plan.test_indices(k)
        scores.append(chi2_mae(y[test], pmfs[k], spec, n_k=len(test)))
    return float(np.mean(scores))


def cross_validate(data, spec: KernelSpec, grid: Grid, estimator: Estimator, plan: FoldPlan,
                   n_jobs: int = 1) -> Dict[str, Optional[float]]:
    """
    一次拟合同时计算PLL与(计数核时的)χ²-MAE

    Returns:
        {"pll": ..., "chi2_mae": ...}
    """
    y = as_observations(spec, data)
    pmfs = fit_folds(y, grid, estimator, plan, n_jobs)
    result = {"pll": cv_pll(y, spec, grid, estimator, plan, pmfs=pmfs), "chi2_mae": None}
    if spec.family == "poisson":
        result["chi2_mae"] = cv_chi2_mae(y, spec, grid, estimator, plan, pmfs=pmfs)
    logger.info(f"{plan.K}折交叉验证完成: pll={result['pll']:.6f}")
    return result
