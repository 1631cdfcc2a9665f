"""
简单示例脚本
演示如何使用估计器
"""

from pathlib import Path

import numpy as np

from src.core.config import Config
from src.core.density import KernelSpec
from src.core.experiments import evaluate_density
from src.core.gmodeler import GModeler
from src.core.io import write_density_csv
from src.core.measurement_error import fit_homogeneous, plug_in_sigma2
from src.core.simulate import ScenarioSpec, generate


def quick_config() -> Config:
    """示例用的小规模配置(默认配置训练时间较长)"""
    config = Config()
    config.set("grid.m", 50)
    config.set("neural_g.hidden_layers", 2)
    config.set("neural_g.hidden_width", 64)
    config.set("neural_g.max_epochs", 200)
    config.set("neural_g.base_step", 0.003)
    return config


def example_fit_estimators():
    """三种估计器拟合同一组数据示例"""
    print("=" * 50)
    print("示例1: 拟合混合密度")
    print("=" * 50)

    modeler = GModeler(quick_config())
    sim = generate(ScenarioSpec("piecewise", 1000, seed=0))

    for estimator in ("npmle", "efron", "neuralg"):
        result = modeler.fit(sim.data, estimator, sim.kernel, seed=0)
        if result["success"]:
            metrics = evaluate_density(result["pmf"], sim.prior, sim.kernel, sim.data, modeler.config)
            print(f"{estimator:8s} W1={metrics['w1']:.4f} MAE={metrics['mae']:.4f} "
                  f"耗时: {result['processing_time']:.2f}秒")
        else:
            print(f"{estimator:8s} 拟合失败: {result.get('error', '未知错误')}")


def example_posterior():
    """后验均值与可信区间示例"""
    print("\n" + "=" * 50)
    print("示例2: 后验推断")
    print("=" * 50)

    modeler = GModeler(quick_config())
    sim = generate(ScenarioSpec("gaussian", 500, seed=1))
    prior = modeler.fit(sim.data, "npmle", sim.kernel)["pmf"]
    result = modeler.posterior(sim.data, prior, sim.kernel)

    if result["success"]:
        intervals = result["intervals"]
        covered = np.mean((intervals[:, 0] <= sim.thetas) & (sim.thetas <= intervals[:, 1]))
        print(f"前5个观测的后验均值: {np.round(result['means'][:5], 3)}")
        print(f"95%可信区间的经验覆盖率: {covered:.3f}")
    else:
        print(f"后验计算失败: {result.get('error', '未知错误')}")


def example_counts():
    """Poisson计数数据示例"""
    print("\n" + "=" * 50)
    print("示例3: 计数数据")
    print("=" * 50)

    modeler = GModeler(quick_config())
    sim = generate(ScenarioSpec("poisson_mix", 1000, seed=2))
    result = modeler.fit(sim.data, "npmle", KernelSpec.poisson())
    if result["success"]:
        print(f"估计的先验均值: {float(result['pmf'].mean()[0]):.3f} (真实值: 5.5)")


def example_measurement_error():
    """成对重复测量的同方差约化示例"""
    print("\n" + "=" * 50)
    print("示例4: 测量误差")
    print("=" * 50)

    rng = np.random.default_rng(3)
    mu = rng.choice([-1.0, 1.5], size=800, p=[0.3, 0.7])
    pairs = mu[:, None] + np.sqrt(0.4) * rng.standard_normal((800, 2))

    modeler = GModeler(quick_config())
    print(f"插入式误差方差: {plug_in_sigma2(pairs):.4f} (真实值: 0.4)")
    pmf = fit_homogeneous(pairs, "npmle", m=60, modeler=modeler)

    Path("output").mkdir(exist_ok=True)
    write_density_csv("output/measurement_error_density.csv", pmf)
    print("密度已保存到: output/measurement_error_density.csv")

    result = modeler.fit_paired(pairs, "efron", seed=0, n_samples=2000)
    if result["success"]:
        draws = result["samples"]
        print(f"Efron's g先验抽样: 均值={draws.mean():.3f}, μ > 0的比例={np.mean(draws > 0):.3f} (真实值: 0.7)")
    else:
        print(f"成对拟合失败: {result.get('error', '未知错误')}")


def example_bivariate():
    """二元位置-尺度neural-g示例"""
    print("\n" + "=" * 50)
    print("示例5: 二元先验")
    print("=" * 50)

    config = quick_config()
    config.set("multivariate.m", 20)
    modeler = GModeler(config)
    sim = generate(ScenarioSpec("bi_pointmass", 500, seed=4))
    result = modeler.fit_bivariate(sim.data, seed=0)

    if result["success"]:
        pmf = result["pmf"]
        top = np.argsort(pmf.weights)[::-1][:3]
        print("质量最大的3个网格点 (μ, σ², 概率):")
        for j in top:
            mu, sigma2 = pmf.grid.points[j]
            print(f"  ({mu:6.3f}, {sigma2:6.3f})  {pmf.weights[j]:.3f}")
    else:
        print(f"二元拟合失败: {result.get('error', '未知错误')}")


if __name__ == "__main__":
    print("\n混合密度估计工具包 - 示例程序")
    print("=" * 50)

    try:
        example_fit_estimators()
        example_posterior()
        example_counts()
        example_measurement_error()
        example_bivariate()

        print("\n" + "=" * 50)
        print("所有示例运行完成!")
        print("=" * 50)

    except Exception as e:
        print(f"\n错误: {e}")
        import traceback
        traceback.print_exc()
