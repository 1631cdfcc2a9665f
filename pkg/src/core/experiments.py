"""
实验模块
模拟重复实验、密度评估、覆盖率实验、超参数敏感性与交叉验证
"""

import copy
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from .config import Config
from .density import Grid, KernelSpec, MixingPMF, build_kernel_matrix
from .exceptions import InputError
from .gmodeler import GModeler
from .metrics import (TruePrior, bayes_mae, cross_validate, integration_grid, make_fold_plan,
                      true_posterior_means, w1_distance)
from .multivariate import mass_near_atoms, mle_feature_stats
from .posterior import credible_interval, empirical_coverage, posterior_mean, posterior_pmf
from .simulate import ScenarioSpec, derive_seed, generate


METRIC_KEYS = ("w1", "w1_cell_width", "mae", "chi2_mae", "pll", "n", "m", "seed",
               "estimator", "elapsed_seconds")


def metrics_record(**values) -> Dict[str, Any]:
    """按固定键顺序构建指标字典, 缺失的指标为None"""
    return {key: values.get(key) for key in METRIC_KEYS}


def map_replications(fn: Callable, items: Sequence, n_jobs: int = 1, desc: str = "",
                     silence: bool = True) -> List:
    """按顺序对items执行fn, n_jobs > 1时使用线程池(结果顺序与items一致)"""
    items = list(items)
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            return list(tqdm(executor.map(fn, items), total=len(items), desc=desc, disable=silence))
    return [fn(item) for item in tqdm(items, desc=desc, disable=silence)]


def evaluate_density(pmf: MixingPMF, truth: TruePrior, kernel: KernelSpec, data=None,
                     config: Optional[Config] = None) -> Dict[str, Any]:
    """
    评估估计的先验: W1距离(一维)与贝叶斯估计的MAE(给定数据时)

    Args:
        pmf: 估计的PMF
        truth: 真实先验
        kernel: 核规格
        data: 观测, 为None时不计算MAE
        config: 配置(积分与求积参数)

    Returns:
        指标字典
    """
    config = config or Config()
    points = int(config.get("metrics.w1_points", 2001))
    margin = float(config.get("metrics.w1_margin", 1.0))
    record = metrics_record(m=pmf.size)

    if pmf.grid.dim == 1 and truth.dim == 1:
        grid = integration_grid(pmf, truth, points, margin)
        record["w1"] = w1_distance(pmf, truth, grid)
        record["w1_cell_width"] = float(grid[1] - grid[0])

    if data is not None and truth.kind != "nig":
        F = build_kernel_matrix(kernel, data, pmf.grid)
        est_means = posterior_mean(posterior_pmf(F, pmf))
        true_means = true_posterior_means(truth, kernel, data,
                                          int(config.get("metrics.quadrature_points", 10001)),
                                          float(config.get("metrics.quadrature_mass", 1e-8)))
        record["mae"] = bayes_mae(est_means, true_means)
        record["n"] = int(np.shape(data)[0])
    return record


def run_replication(modeler: GModeler, scenario: str, n: int, seed: int,
                    estimator: str = "neuralg", coverage: bool = False) -> Dict[str, Any]:
    """
    单次重复实验: 生成数据, 拟合, 评估

    Args:
        modeler: 估计器
        scenario: 场景名称
        n: 样本量
        seed: 本次重复的种子
        estimator: 估计器名称
        coverage: 是否同时计算后验可信区间的覆盖率

    Returns:
        指标字典(含pmf, 覆盖率实验时含ecp与width)
    """
    start_time = time.time()
    spec = ScenarioSpec(scenario, n, seed)
    sim = generate(spec)

    if spec.bivariate:
        if estimator != "neuralg":
            raise InputError(f"二元场景只支持neuralg估计器, 得到 {estimator}")
        fitted = modeler.fit_bivariate(sim.data, seed=seed)
        if not fitted["success"]:
            raise fitted["exception"]
        pmf = fitted["pmf"]
        record = metrics_record(n=n, m=pmf.size)
        if sim.prior.kind == "atomic":
            floor = float(modeler.config.get("multivariate.sigma2_floor", 1e-6))
            record["atom_mass"] = mass_near_atoms(pmf, sim.prior.atoms,
                                                  stats=mle_feature_stats(sim.data, floor)).tolist()
    else:
        grid = modeler.grid(sim.data, sim.kernel, seed)
        pmf = modeler.fit_pmf(sim.data, sim.kernel, grid, estimator, seed)["pmf"]
        record = evaluate_density(pmf, sim.prior, sim.kernel, sim.data, modeler.config)
        if coverage:
            F = build_kernel_matrix(sim.kernel, sim.data, grid)
            intervals = credible_interval(posterior_pmf(F, pmf),
                                          float(modeler.config.get("metrics.level", 0.95)))
            record["ecp"] = empirical_coverage(sim.thetas, intervals)
            record["width"] = float(np.mean(intervals[:, 1] - intervals[:, 0]))

    record.update({"seed": seed, "estimator": estimator, "scenario": scenario,
                   "elapsed_seconds": time.time() - start_time})
    record["pmf"] = pmf
    return record


def run_replications(modeler: GModeler, scenario: str, n: int, reps: int, master_seed: int,
                     estimator: str = "neuralg", coverage: bool = False, n_jobs: int = 1,
                     silence: bool = True) -> List[Dict[str, Any]]:
    """以派生种子并行执行reps次重复实验"""
    if reps < 1:
        raise InputError(f"重复次数必须≥1: {reps}")
    seeds = [derive_seed(master_seed, r) for r in range(reps)]
    return map_replications(
        lambda s: run_replication(modeler, scenario, n, s, estimator, coverage),
        seeds, n_jobs, desc=f"{scenario} n={n}", silence=silence)


def run_coverage(modeler: GModeler, scenario: str, n_list: Sequence[int], reps: int,
                 master_seed: int, estimator: str = "neuralg", n_jobs: int = 1,
                 silence: bool = True, on_progress: Optional[Callable[[], None]] = None) -> pd.DataFrame:
    """
    覆盖率实验: 每个样本量下重复reps次, 汇总平均覆盖率与平均区间宽度

    on_progress在每个样本量完成后调用

    Returns:
        列为n, ecp_mean, width_mean的表
    """
    if not n_list:
        raise InputError("样本量列表不能为空")
    rows = []
    for n in n_list:
        records = run_replications(modeler, scenario, int(n), reps, master_seed, estimator,
                                   coverage=True, n_jobs=n_jobs, silence=silence)
        rows.append({"n": int(n),
                     "ecp_mean": float(np.mean([r["ecp"] for r in records])),
                     "width_mean": float(np.mean([r["width"] for r in records]))})
        logger.info(f"覆盖率: n={n}, ecp={rows[-1]['ecp_mean']:.4f}")
        if on_progress is not None:
            on_progress()
    return pd.DataFrame(rows, columns=["n", "ecp_mean", "width_mean"])


def with_architecture(modeler: GModeler, layers: int, width: int) -> GModeler:
    """复制配置并替换网络深度与宽度"""
    config = copy.deepcopy(modeler.config)
    config.set("neural_g.hidden_layers", int(layers))
    config.set("neural_g.hidden_width", int(width))
    return GModeler(config)


def run_sensitivity(modeler: GModeler, scenario: str, n: int, layers: Sequence[int],
                    widths: Sequence[int], reps: int, master_seed: int, n_jobs: int = 1,
                    silence: bool = True) -> pd.DataFrame:
    """
    超参数敏感性: 对每个(L, h)组合重复reps次, 汇总平均W1与平均MAE

    Returns:
        列为L, h, w1_mean, mae_mean的表
    """
    if not layers or not widths:
        raise InputError("深度与宽度列表不能为空")
    rows = []
    for L in layers:
        for h in widths:
            records = run_replications(with_architecture(modeler, L, h), scenario, n, reps,
                                       master_seed, "neuralg", n_jobs=n_jobs, silence=silence)
            rows.append({"L": int(L), "h": int(h),
                         "w1_mean": float(np.mean([r["w1"] for r in records])),
                         "mae_mean": float(np.mean([r["mae"] for r in records]))})
            logger.info(f"敏感性: L={L}, h={h}, w1={rows[-1]['w1_mean']:.4f}")
    return pd.DataFrame(rows, columns=["L", "h", "w1_mean", "mae_mean"])


def run_cv(modeler: GModeler, data, kernel: KernelSpec, estimator: str = "npmle",
           K: int = 10, seed: int = 0, grid: Optional[Grid] = None,
           n_jobs: int = 1) -> Dict[str, Any]:
    """
    K折交叉验证: 在全数据网格上对每折拟合, 计算PLL与χ²-MAE

    Returns:
        指标字典
    """
    start_time = time.time()
    y = np.asarray(data, dtype=np.float64)
    plan = make_fold_plan(y.shape[0], K, seed)
    grid = modeler.grid(y, kernel, seed) if grid is None else grid
    scores = cross_validate(y, kernel, grid, modeler.estimator(estimator, kernel, seed), plan, n_jobs)
    record = metrics_record(chi2_mae=scores["chi2_mae"], pll=scores["pll"], n=int(y.shape[0]),
                            m=grid.size, seed=seed, estimator=estimator,
                            elapsed_seconds=time.time() - start_time)
    record["K"] = K
    return record
