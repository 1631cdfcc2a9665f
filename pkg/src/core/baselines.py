"""
基线估计器模块
网格上的NPMLE(EM乘法更新)与Efron's g(自然三次样条指数族 + 范数惩罚)
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from .density import Grid, KernelMatrix, MixingPMF, mixture_nll, row_mixtures
from .exceptions import InputError


@dataclass(frozen=True, eq=False)
class NpmleResult:
    """EM求解结果, nll_history[k]为第k次迭代后的负对数似然(第0项为初始值)"""

    pmf: MixingPMF
    nll_history: List[float]
    iterations: int
    converged: bool


def npmle_fit(F: KernelMatrix, grid: Grid, max_iters: int = 20000, tol: float = 1e-10) -> NpmleResult:
    """
    用EM乘法更新求网格上的NPMLE: w_j ← w_j·(1/n)·Σ_i F[i][j] / (Σ_k F[i][k]·w_k)

    Args:
        F: n×m核矩阵(每行至少有一个正元素)
        grid: 网格
        max_iters: 最大迭代次数
        tol: 负对数似然改进量小于tol时停止

    Returns:
        NpmleResult
    """
    if F.m != grid.size:
        raise InputError(f"核矩阵列数 {F.m} 与网格大小 {grid.size} 不一致")
    if max_iters < 1:
        raise InputError(f"最大迭代次数必须≥1: {max_iters}")

    values = F.values
    n = F.n
    w = np.full(grid.size, 1.0 / grid.size)
    history = [mixture_nll(F, MixingPMF(grid, w))]
    converged = False
    iterations = 0

    for iterations in range(1, max_iters + 1):
        mix = row_mixtures(values, w)
        w = w * (values.T @ (1.0 / mix)) / n
        w = w / w.sum()
        history.append(mixture_nll(F, MixingPMF(grid, w)))
        if history[-2] - history[-1] < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"NPMLE未在{max_iters}次迭代内收敛, 最后改进量={history[-2] - history[-1]:.3e}")
    else:
        logger.debug(f"NPMLE收敛: 迭代{iterations}次, NLL={history[-1]:.8f}")
    return NpmleResult(MixingPMF(grid, w), history, iterations, converged)


def npmle_em(F: KernelMatrix, grid: Grid, max_iters: int = 20000, tol: float = 1e-10) -> MixingPMF:
    """NPMLE估计, 只返回PMF"""
    return npmle_fit(F, grid, max_iters, tol).pmf


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """
    网格上的样条基矩阵Q(m×p)

    列已中心化并缩放为单位L2范数
    """

    Q: np.ndarray
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q.reshape(-1, 1)
        if Q.ndim != 2 or Q.shape[1] < 1:
            raise InputError(f"基矩阵形状错误: {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise InputError("基矩阵存在非有限值")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=np.float64))

    @property
    def df(self) -> int:
        return self.Q.shape[1]

    @property
    def m(self) -> int:
        return self.Q.shape[0]


def _truncated_cube(x: np.ndarray, knot: float) -> np.ndarray:
    return np.maximum(x - knot, 0.0) ** 3


def spline_basis(grid: Grid, p: int) -> SplineBasis:
    """
    构建自然三次样条基: 取p+1个节点(两端为网格端点, 内部节点为网格的等距分位数),
    截断幂形式的自然样条去掉常数列后恰有p列

    Args:
        grid: 一维网格
        p: 自由度

    Returns:
        SplineBasis
    """
    if grid.dim != 1:
        raise InputError("样条基只适用于一维网格")
    m = grid.size
    if not 1 <= p < m:
        raise InputError(f"自由度必须满足1 ≤ p < m: p={p}, m={m}")

    x = grid.values
    knots = np.quantile(x, np.linspace(0.0, 1.0, p + 1))
    last = knots[-1]

    def d(k: int) -> np.ndarray:
        return (_truncated_cube(x, knots[k]) - _truncated_cube(x, last)) / (last - knots[k])

    columns = [x.copy()]
    if p > 1:
        d_last = d(p - 1)
        columns += [d(k) - d_last for k in range(p - 1)]
    Q = np.column_stack(columns)
    Q = Q - Q.mean(axis=0)
    norms = np.linalg.norm(Q, axis=0)
    norms[norms == 0] = 1.0
    return SplineBasis(Q / norms, knots)


@dataclass(frozen=True, eq=False)
class EfronParams:
    """Efron's g的系数α与惩罚参数λ"""

    alpha: np.ndarray
    lam: float
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(alpha)):
            raise InputError("alpha存在非有限值")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InputError(f"惩罚参数必须非负: {self.lam}")
        object.__setattr__(self, "alpha", alpha)


def _efron_log_weights(Q: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    eta = Q @ alpha
    return eta - logsumexp(eta)


def efron_pmf(basis: SplineBasis, alpha, grid: Grid = None) -> MixingPMF:
    """
    π_j(α) = exp{Q_j·α − φ(α)}, 用log-sum-exp归一化

    Args:
        basis: 样条基
        alpha: 系数向量
        grid: 网格, 为None时使用0..m−1的索引网格

    Returns:
        MixingPMF
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.shape[0] != basis.df:
        raise InputError(f"alpha长度 {alpha.shape[0]} 与基的自由度 {basis.df} 不一致")
    if grid is None:
        grid = Grid(np.arange(basis.m, dtype=np.float64))
    elif grid.size != basis.m:
        raise InputError(f"网格大小 {grid.size} 与基矩阵行数 {basis.m} 不一致")
    w = np.exp(_efron_log_weights(basis.Q, alpha))
    return MixingPMF.normalized(grid, w)


def _loglik_and_grad(F: np.ndarray, Q: np.ndarray, alpha: np.ndarray) -> Tuple[float, np.ndarray]:
    """总对数似然Σ_i log(F_i·π(α))及其对α的梯度Qᵀ(Σ_i post_i − n·π)"""
    pi = np.exp(_efron_log_weights(Q, alpha))
    mix = F @ pi
    if np.any(mix <= 0):
        return -np.inf, np.zeros_like(alpha)
    post_sum = pi * (F.T @ (1.0 / mix))
    grad = Q.T @ (post_sum - F.shape[0] * pi)
    return float(np.sum(np.log(mix))), grad


def efron_objective(F: KernelMatrix, basis: SplineBasis, alpha, lam: float) -> float:
    """惩罚目标 Σ_i log(F_i·π(α)) − λ‖α‖₂"""
    alpha = np.asarray(alpha, dtype=np.float64)
    ll, _ = _loglik_and_grad(F.values, basis.Q, alpha)
    return ll - lam * float(np.linalg.norm(alpha))


def efron_fit(F: KernelMatrix, basis: SplineBasis, lam: float, grid: Grid,
              max_iters: int = 5000, grad_tol: float = 1e-6) -> Tuple[MixingPMF, EfronParams]:
    """
    最大化 Σ_i log(F_i·π(α)) − λ‖α‖₂: 从α=0出发做带回溯线搜索的梯度上升

    α=0处惩罚项取次梯度; 若‖∇loglik(0)‖₂ ≤ λ则α=0已是最优

    Args:
        F: 核矩阵
        basis: 样条基
        lam: 惩罚参数λ ≥ 0
        grid: 网格
        max_iters: 最大迭代次数
        grad_tol: 梯度上确界范数阈值

    Returns:
        (MixingPMF, EfronParams)
    """
    if not (np.isfinite(lam) and lam >= 0):
        raise InputError(f"惩罚参数必须非负: {lam}")
    if F.m != basis.m:
        raise InputError(f"核矩阵列数 {F.m} 与基矩阵行数 {basis.m} 不一致")

    values, Q = F.values, basis.Q
    alpha = np.zeros(basis.df)
    ll, grad_ll = _loglik_and_grad(values, Q, alpha)
    if np.linalg.norm(grad_ll) <= lam:
        logger.debug("Efron's g: α=0满足最优性条件, 返回均匀PMF")
        return efron_pmf(basis, alpha, grid), EfronParams(alpha, lam, True, 0)

    def objective(a: np.ndarray) -> float:
        value, _ = _loglik_and_grad(values, Q, a)
        return value - lam * float(np.linalg.norm(a))

    def ascent_direction(a: np.ndarray, g_ll: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(a)
        return g_ll - lam * a / norm if norm > 0 else g_ll

    current = ll
    step = 1.0 / max(1.0, float(np.abs(grad_ll).max()))
    converged = False
    iterations = 0

    for iterations in range(1, max_iters + 1):
        direction = ascent_direction(alpha, grad_ll)
        if np.abs(direction).max() < grad_tol:
            converged = True
            break
        slope = float(direction @ direction)
        # Armijo回溯
        while True:
            candidate = alpha + step * direction
            value = objective(candidate)
            if value >= current + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            logger.warning(f"Efron's g: 线搜索步长过小, 在第{iterations}次迭代停止, "
                           f"方向上确界范数={np.abs(direction).max():.3e} (阈值{grad_tol:.1e})")
            break
        alpha = candidate
        current = value
        _, grad_ll = _loglik_and_grad(values, Q, alpha)
        step = min(step * 2.0, 1e6)

    if not converged:
        logger.warning(f"Efron's g未在{max_iters}次迭代内收敛, 返回当前最优迭代")
    else:
        logger.debug(f"Efron's g收敛: 迭代{iterations}次, 目标值={current:.6f}")
    return efron_pmf(basis, alpha, grid), EfronParams(alpha, lam, converged, iterations)
