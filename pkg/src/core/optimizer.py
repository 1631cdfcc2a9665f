"""
优化器模块
加权平均梯度(WAG)更新、小批量调度、衰减步长、c步滞后停止规则以及neural-g训练主循环
"""

import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Deque, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .density import Grid, KernelMatrix, KernelSpec, MixingPMF, build_kernel_matrix, mixture_nll
from .exceptions import InputError, NumericalError, TrainingError
from .mlp import GradientSet, MlpArchitecture, MlpModel, forward_pmf, init_model, loss_and_gradient


@dataclass(frozen=True)
class TrainConfig:
    """
    neural-g训练超参数

    全数据损失每eval_every次迭代评估一次, 停止规则的滞后stop_lag按评估次数计:
    eval_every=k时比较的是相隔k·stop_lag次迭代的两个损失
    """

    batch_size: int
    max_epochs: int = 8000
    weight: float = 0.6
    base_step: float = 0.0003
    step_decay: float = 0.2
    stop_tol: float = 0.01
    stop_lag: int = 10
    seed: int = 0
    eval_every: int = 1
    standardize_inputs: bool = True
    log_every: int = 500

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError(f"批大小必须≥1: {self.batch_size}")
        if self.max_epochs < 1:
            raise InputError(f"最大训练轮数必须≥1: {self.max_epochs}")
        if not 0.0 <= self.weight <= 1.0:
            raise InputError(f"WAG权重必须在[0, 1]内: {self.weight}")
        if not self.base_step > 0:
            raise InputError(f"基础步长必须为正: {self.base_step}")
        if self.step_decay < 0:
            raise InputError(f"步长衰减指数不能为负: {self.step_decay}")
        if not self.stop_tol > 0:
            raise InputError(f"停止阈值必须为正: {self.stop_tol}")
        if self.stop_lag < 1:
            raise InputError(f"停止滞后必须≥1: {self.stop_lag}")
        if self.eval_every < 1:
            raise InputError(f"损失评估间隔必须≥1: {self.eval_every}")


@dataclass
class TrainState:
    """
    优化器状态

    hist_mean为第1..t−2次迭代梯度的平均; pending保存第t−1次迭代的梯度,
    在下一次更新之后才并入历史
    """

    t: int = 0
    hist_mean: Optional[GradientSet] = None
    hist_count: int = 0
    pending: Optional[GradientSet] = None
    losses: Deque[float] = field(default_factory=deque)
    epoch: int = 0

    @classmethod
    def start(cls, cfg: TrainConfig) -> "TrainState":
        return cls(losses=deque(maxlen=cfg.stop_lag + 1))


class TraceRow(NamedTuple):
    iteration: int
    epoch: int
    full_loss: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    """训练结果"""

    pmf: MixingPMF
    model: MlpModel
    trace: List[TraceRow]
    stop_reason: str
    iterations: int
    epochs: int
    elapsed_seconds: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.trace[0].full_loss

    @property
    def final_loss(self) -> float:
        return self.trace[-1].full_loss


def step_size(t: int, cfg: TrainConfig) -> float:
    """第t次迭代的步长 η·t^(−a)"""
    if t < 1:
        raise InputError(f"迭代次数必须≥1: {t}")
    return cfg.base_step * float(t) ** (-cfg.step_decay)


def wag_step(model: MlpModel, state: TrainState, g_current: GradientSet,
             cfg: TrainConfig) -> Tuple[MlpModel, TrainState]:
    """
    执行一次WAG更新: φ ← φ − η^(t)·[w·g_t + (1−w)·mean(g_1..g_{t−2})]

    t ≤ 2时历史窗口为空, 只使用当前梯度

    Args:
        model: 当前网络
        state: 优化器状态(不会被修改)
        g_current: 当前小批量梯度
        cfg: 训练配置

    Returns:
        (更新后的网络, 更新后的状态)
    """
    if not g_current.matches(model):
        raise InputError("梯度形状与网络参数不一致")
    t = state.t + 1
    if not g_current.is_finite():
        raise TrainingError(f"第{t}次迭代梯度出现非有限值", index=t)

    if t <= 2 or state.hist_count == 0:
        direction = g_current
    else:
        direction = g_current.combine(state.hist_mean, cfg.weight, 1.0 - cfg.weight)

    eta = step_size(t, cfg)
    weights = [W - eta * dW for W, dW in zip(model.weights, direction.weights)]
    biases = [b - eta * db for b, db in zip(model.biases, direction.biases)]

    hist_mean, hist_count = state.hist_mean, state.hist_count
    if state.pending is not None:
        hist_count += 1
        if hist_mean is None:
            hist_mean = state.pending
        else:
            # 增量平均
            hist_mean = hist_mean.combine(state.pending, 1.0 - 1.0 / hist_count, 1.0 / hist_count)

    new_state = replace(state, t=t, hist_mean=hist_mean, hist_count=hist_count, pending=g_current)
    return model.with_params(weights, biases), new_state


def epoch_batches(n: int, S: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    随机打乱0..n−1并切分为⌈n/S⌉个连续批次

    Args:
        n: 样本量
        S: 批大小
        rng: 随机数生成器

    Returns:
        索引批次列表
    """
    if n < 1 or S < 1:
        raise InputError(f"n和S必须≥1: n={n}, S={S}")
    perm = rng.permutation(n)
    return [perm[start:start + S] for start in range(0, n, S)]


def should_stop(loss_history: Sequence[float], t: int, cfg: TrainConfig) -> bool:
    """
    停止规则: t > c 且 |ℓ^(t) − ℓ^(t−c)| < ε

    loss_history按时间顺序保存已评估的全数据损失, 最后一个元素为ℓ^(t);
    c取cfg.stop_lag, 以评估次数计
    """
    c = cfg.stop_lag
    if t <= c or len(loss_history) < c + 1:
        return False
    return abs(loss_history[-1] - loss_history[-1 - c]) < cfg.stop_tol


def input_transform(grid: Grid, spec: KernelSpec, standardize: bool,
                    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None):
    """
    计算网络输入变换: location_scale核对σ²坐标取对数, 然后按坐标z标准化

    Args:
        grid: 网格
        spec: 核规格
        standardize: 是否标准化
        stats: (均值, 标准差), 在变换后的坐标上给出; 为None时取网格坐标的统计量

    Returns:
        (input_shift, input_scale, log_coords)
    """
    d = grid.dim
    if not standardize:
        return np.zeros(d), np.ones(d), ()
    log_coords = (1,) if spec.family == "location_scale" else ()
    if stats is not None:
        shift = np.asarray(stats[0], dtype=np.float64).reshape(d)
        scale = np.array(stats[1], dtype=np.float64).reshape(d)
    else:
        X = np.array(grid.points, dtype=np.float64)
        for idx in log_coords:
            X[:, idx] = np.log(X[:, idx])
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
    scale[scale <= 0] = 1.0
    return shift, scale, log_coords


def _seed_streams(seed: int) -> Tuple[int, np.random.Generator]:
    """由主种子派生初始化种子与打乱数据用的生成器"""
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(shuffle_ss)


def _full_loss(F: KernelMatrix, model: MlpModel, grid: Grid, t: int) -> float:
    try:
        return mixture_nll(F, forward_pmf(model, grid))
    except NumericalError as e:
        raise TrainingError(f"第{t}次迭代全数据损失非有限: {e}", index=t) from e


def train_from_kernel(F: KernelMatrix, grid: Grid, arch: MlpArchitecture, cfg: TrainConfig,
                      spec: Optional[KernelSpec] = None,
                      model: Optional[MlpModel] = None,
                      input_stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """
    在预先计算的核矩阵上训练neural-g

    Args:
        F: n×m核矩阵
        grid: 网格
        arch: 网络结构
        cfg: 训练配置
        spec: 核规格, 用于确定输入变换
        model: 初始网络, 为None时按cfg.seed随机初始化
        input_stats: 输入标准化所用的(均值, 标准差), 为None时取网格坐标的统计量

    Returns:
        TrainResult
    """
    if F.m != grid.size:
        raise InputError(f"核矩阵列数 {F.m} 与网格大小 {grid.size} 不一致")
    start_time = time.time()
    init_seed, rng = _seed_streams(cfg.seed)
    if model is None:
        shift, scale, log_coords = input_transform(grid, spec or KernelSpec.normal(),
                                                   cfg.standardize_inputs, input_stats)
        model = init_model(arch, init_seed, shift, scale, log_coords)
    elif model.architecture != arch:
        raise InputError("初始网络结构与arch不一致")

    n = F.n
    S = min(cfg.batch_size, n)
    state = TrainState.start(cfg)
    trace = [TraceRow(0, 0, _full_loss(F, model, grid, 0))]
    stop_reason = "max_epochs"
    logger.info(f"开始训练neural-g: n={n}, m={grid.size}, S={S}, L={arch.hidden_layers}, "
                f"h={arch.hidden_width}, 初始损失={trace[0].full_loss:.6f}")

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        for b, rows in enumerate(epoch_batches(n, S, rng)):
            _, grad = loss_and_gradient(model, F.take(rows), grid, batch_index=b)
            model, state = wag_step(model, state, grad, cfg)
            if state.t % cfg.eval_every:
                continue
            full = _full_loss(F, model, grid, state.t)
            trace.append(TraceRow(state.t, epoch, full))
            state.losses.append(full)
            if cfg.log_every and state.t % cfg.log_every == 0:
                logger.debug(f"迭代{state.t} (第{epoch}轮): 全数据损失={full:.8f}")
            if should_stop(state.losses, state.t, cfg):
                stop_reason = "converged"
                break
        if stop_reason == "converged":
            break

    if trace[-1].iteration != state.t:
        trace.append(TraceRow(state.t, state.epoch, _full_loss(F, model, grid, state.t)))

    elapsed = time.time() - start_time
    logger.info(f"训练结束: 原因={stop_reason}, 迭代{state.t}次, {state.epoch}轮, "
                f"最终损失={trace[-1].full_loss:.6f}, 耗时{elapsed:.2f}秒")
    return TrainResult(forward_pmf(model, grid), model, trace, stop_reason,
                       state.t, state.epoch, elapsed)


def train_neural_g(data, spec: KernelSpec, grid: Grid, arch: MlpArchitecture,
                   cfg: TrainConfig, n_jobs: int = 1,
                   input_stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """
    训练neural-g: 构建核矩阵后执行小批量WAG迭代, 每次迭代评估全数据损失用于停止规则

    Args:
        data: 观测
        spec: 核规格
        grid: 网格
        arch: 网络结构(output_dim须等于网格大小)
        cfg: 训练配置
        n_jobs: 构建核矩阵的线程数
        input_stats: 输入标准化所用的(均值, 标准差)

    Returns:
        TrainResult
    """
    F = build_kernel_matrix(spec, data, grid, n_jobs=n_jobs)
    return train_from_kernel(F, grid, arch, cfg, spec=spec, input_stats=input_stats)


def trace_frame(trace: Sequence[TraceRow]) -> pd.DataFrame:
    return pd.DataFrame(list(trace), columns=["iteration", "epoch", "full_loss"])


def write_trace_csv(trace: Sequence[TraceRow], path: Union[str, Path]):
    """写出训练轨迹CSV: iteration,epoch,full_loss"""
    trace_frame(trace).to_csv(path, index=False, float_format="%.17g")
    logger.info(f"训练轨迹已保存到: {path}")
