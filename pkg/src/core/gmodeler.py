"""
估计器主模块
整合核、网格、neural-g与基线估计器、后验推断, 对外返回结果字典
"""

import time
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
from loguru import logger

from .baselines import efron_fit, npmle_fit, spline_basis
from .config import Config
from .density import Grid, KernelSpec, MixingPMF, build_kernel_matrix
from .exceptions import InputError, MixDensError
from .measurement_error import fit_heterogeneous, homogeneous_reduction, sample_prior
from .mlp import MlpModel
from .multivariate import mle_feature_stats, select_grid_bivariate
from .optimizer import train_from_kernel
from .posterior import credible_interval, posterior_mean, posterior_pmf
from .simulate import grid_for_kernel


ESTIMATORS = ("neuralg", "npmle", "efron")


class GModeler:
    """混合密度(先验)估计器"""

    def __init__(self, config: Optional[Union[str, Config]] = None):
        """
        初始化估计器

        Args:
            config: 配置对象或配置文件路径
        """
        if isinstance(config, Config):
            self.config = config
        else:
            self.config = Config(config)
        self.num_workers = int(self.config.get("system.num_workers", 4))

    def kernel(self) -> KernelSpec:
        """按kernel配置节构建核规格"""
        section = self.config["kernel"] or {}
        return KernelSpec(section.get("family", "normal"),
                          sigma=float(section.get("sigma", 1.0)),
                          replicates=int(section.get("replicates", 2)))

    def grid(self, data, kernel: KernelSpec, seed: int = 0) -> Grid:
        """按配置构建默认网格; location_scale核用k-means代表点"""
        if kernel.family == "location_scale":
            return select_grid_bivariate(
                data,
                m=min(int(self.config.get("multivariate.m", 50)), np.shape(data)[0]),
                seed=seed,
                n_init=int(self.config.get("multivariate.kmeans_n_init", 10)),
                sigma2_floor=float(self.config.get("multivariate.sigma2_floor", 1e-6)),
            )
        return grid_for_kernel(data, kernel, int(self.config.get("grid.m", 100)),
                               float(self.config.get("grid.poisson_floor", 1e-3)))

    def _fit_neuralg(self, data, F, grid: Grid, kernel: KernelSpec, seed: int,
                     init_model: Optional[MlpModel] = None) -> Dict[str, Any]:
        cfg = self.config.train_config(F.n, seed)
        if init_model is not None:
            arch = init_model.architecture
            logger.info(f"从已保存的网络热启动: L={arch.hidden_layers}, h={arch.hidden_width}")
        else:
            arch = self.config.architecture(grid.size, grid.dim)
        stats = None
        if kernel.family == "location_scale":
            stats = mle_feature_stats(data, float(self.config.get("multivariate.sigma2_floor", 1e-6)))
        result = train_from_kernel(F, grid, arch, cfg, spec=kernel, model=init_model, input_stats=stats)
        return {"pmf": result.pmf, "model": result.model, "trace": result.trace,
                "stop_reason": result.stop_reason, "iterations": result.iterations,
                "epochs": result.epochs, "converged": result.stop_reason == "converged"}

    def _fit_npmle(self, F, grid: Grid) -> Dict[str, Any]:
        result = npmle_fit(F, grid, int(self.config.get("npmle.max_iters", 20000)),
                           float(self.config.get("npmle.tol", 1e-10)))
        return {"pmf": result.pmf, "model": result, "iterations": result.iterations,
                "converged": result.converged}

    def _fit_efron(self, F, grid: Grid) -> Dict[str, Any]:
        if grid.dim != 1:
            raise InputError("Efron's g只适用于一维网格")
        basis = spline_basis(grid, int(self.config.get("efron.df", 5)))
        pmf, params = efron_fit(F, basis, float(self.config.get("efron.lambda", 1.0)), grid,
                                int(self.config.get("efron.max_iters", 5000)),
                                float(self.config.get("efron.grad_tol", 1e-6)))
        return {"pmf": pmf, "model": params, "basis": basis, "iterations": params.iterations,
                "converged": params.converged}

    def fit_pmf(self, data, kernel: KernelSpec, grid: Grid, estimator: str = "neuralg",
                seed: Optional[int] = None,
                init_model: Optional[MlpModel] = None) -> Dict[str, Any]:
        """
        拟合估计器并返回内部结果(异常直接抛出)

        Args:
            data: 观测
            kernel: 核规格
            grid: 网格
            estimator: neuralg | npmle | efron
            seed: 随机种子
            init_model: neuralg的初始网络(热启动), 其结构决定训练所用的网络

        Returns:
            含pmf、model等键的字典
        """
        if estimator not in ESTIMATORS:
            raise InputError(f"不支持的估计器: {estimator}, 可选: {', '.join(ESTIMATORS)}")
        if init_model is not None and estimator != "neuralg":
            raise InputError(f"只有neuralg支持初始网络, 得到估计器 {estimator}")
        F = build_kernel_matrix(kernel, data, grid, n_jobs=self.num_workers)
        if estimator == "neuralg":
            return self._fit_neuralg(data, F, grid, kernel, self.config.seed(seed), init_model)
        if estimator == "npmle":
            return self._fit_npmle(F, grid)
        return self._fit_efron(F, grid)

    def estimator(self, name: str, kernel: KernelSpec,
                  seed: Optional[int] = None) -> Callable[[np.ndarray, Grid], MixingPMF]:
        """返回 (训练数据, 网格) -> MixingPMF 的估计器回调, 用于交叉验证"""
        def fit(train, grid: Grid) -> MixingPMF:
            return self.fit_pmf(train, kernel, grid, name, seed)["pmf"]
        return fit

    def fit(self, data, estimator: str = "neuralg", kernel: Optional[KernelSpec] = None,
            grid: Optional[Grid] = None, seed: Optional[int] = None,
            init_model: Optional[MlpModel] = None) -> Dict[str, Any]:
        """
        估计混合密度

        Args:
            data: 观测(一元向量或(n, r)成对矩阵)
            estimator: neuralg | npmle | efron
            kernel: 核规格, 为None时按配置构建
            grid: 网格, 为None时按配置构建
            seed: 随机种子
            init_model: neuralg的初始网络

        Returns:
            结果字典
        """
        start_time = time.time()
        try:
            kernel = self.kernel() if kernel is None else kernel
            master = self.config.seed(seed)
            grid = self.grid(data, kernel, master) if grid is None else grid
            logger.info(f"开始拟合: 估计器={estimator}, 核={kernel.family}, m={grid.size}")
            result = self.fit_pmf(data, kernel, grid, estimator, master, init_model)
        except MixDensError as e:
            logger.error(f"拟合失败: {e}")
            return {
                "success": False,
                "error": str(e),
                "exception": e,
                "estimator": estimator,
                "processing_time": time.time() - start_time,
            }

        result.update({
            "success": True,
            "estimator": estimator,
            "kernel": kernel,
            "grid": grid,
            "seed": master,
            "n": int(np.shape(data)[0]),
            "processing_time": time.time() - start_time,
        })
        logger.info(f"拟合完成: 估计器={estimator}, 耗时{result['processing_time']:.2f}秒")
        return result

    def fit_bivariate(self, pairs, seed: Optional[int] = None) -> Dict[str, Any]:
        """二元位置-尺度neural-g: 先选代表点网格, 再训练d=2的网络"""
        start_time = time.time()
        try:
            master = self.config.seed(seed)
            trained = fit_heterogeneous(
                pairs,
                self.config.train_config(np.shape(pairs)[0], master),
                m=int(self.config.get("multivariate.m", 50)),
                hidden_layers=int(self.config.get("neural_g.hidden_layers", 4)),
                hidden_width=int(self.config.get("neural_g.hidden_width", 500)),
                n_init=int(self.config.get("multivariate.kmeans_n_init", 10)),
                sigma2_floor=float(self.config.get("multivariate.sigma2_floor", 1e-6)),
                n_jobs=self.num_workers,
            )
        except MixDensError as e:
            logger.error(f"二元拟合失败: {e}")
            return {"success": False, "error": str(e), "exception": e,
                    "processing_time": time.time() - start_time}
        return {
            "success": True,
            "estimator": "neuralg",
            "pmf": trained.pmf,
            "model": trained.model,
            "trace": trained.trace,
            "stop_reason": trained.stop_reason,
            "grid": trained.pmf.grid,
            "kernel": KernelSpec.location_scale(2),
            "seed": master,
            "processing_time": time.time() - start_time,
        }

    def fit_paired(self, pairs, estimator: str = "neuralg", heterogeneous: bool = False,
                   sigma2: Optional[float] = None, seed: Optional[int] = None,
                   n_samples: int = 0) -> Dict[str, Any]:
        """
        成对重复测量的先验估计

        同方差路线在平均观测ȳ_i ~ N(μ_i, σ̂²/2)上拟合所选估计器;
        异方差路线用二元位置-尺度neural-g估计(μ, σ²)的联合先验

        Args:
            pairs: (n, 2)成对观测
            estimator: neuralg | npmle | efron(异方差路线只支持neuralg)
            heterogeneous: 是否走异方差路线
            sigma2: 已知的误差方差, 为None时用插入式估计
            seed: 随机种子
            n_samples: 从估计的先验中抽样的个数, 0表示不抽样

        Returns:
            结果字典(同方差路线含sigma2, 抽样时含samples)
        """
        start_time = time.time()
        route = "heterogeneous" if heterogeneous else "homogeneous"
        try:
            if heterogeneous:
                if estimator != "neuralg":
                    raise InputError(f"异方差路线只支持neuralg估计器, 得到 {estimator}")
                result = self.fit_bivariate(pairs, seed=seed)
            else:
                averaged, kernel, s2 = homogeneous_reduction(pairs, sigma2)
                result = self.fit(averaged, estimator, kernel, seed=seed)
                result["sigma2"] = s2
            if result["success"] and n_samples:
                result["samples"] = sample_prior(result["pmf"], n_samples, self.config.seed(seed))
        except MixDensError as e:
            logger.error(f"成对数据拟合失败: {e}")
            result = {"success": False, "error": str(e), "exception": e, "estimator": estimator}

        result.update({"route": route, "processing_time": time.time() - start_time})
        return result

    def posterior(self, data, prior: MixingPMF, kernel: Optional[KernelSpec] = None,
                  level: Optional[float] = None) -> Dict[str, Any]:
        """
        计算后验均值与可信区间

        Returns:
            结果字典, 含means与intervals(一维网格)
        """
        try:
            kernel = self.kernel() if kernel is None else kernel
            level = float(self.config.get("metrics.level", 0.95)) if level is None else level
            F = build_kernel_matrix(kernel, data, prior.grid, n_jobs=self.num_workers)
            post = posterior_pmf(F, prior)
            means = posterior_mean(post)
            intervals = credible_interval(post, level) if prior.grid.dim == 1 else None
        except MixDensError as e:
            logger.error(f"后验计算失败: {e}")
            return {"success": False, "error": str(e), "exception": e}
        return {"success": True, "posterior": post, "means": means,
                "intervals": intervals, "level": level}
