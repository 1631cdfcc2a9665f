"""
单元测试 - 多元neural-g模块
"""

import numpy as np
import pytest

from src.core.density import Grid, MixingPMF
from src.core.exceptions import InputError
from src.core.mlp import MlpArchitecture
from src.core.gmodeler import GModeler
from src.core.multivariate import (fit_multivariate_neural_g, grid_feature_stats, mass_near_atoms,
                                   mle_feature_stats, pair_mles, select_grid_bivariate,
                                   standardized_coordinates)
from src.core.optimizer import TrainConfig
from src.core.simulate import ScenarioSpec, generate


def planted_pairs(n_each=20):
    """两组完全相同的观测对: (μ=0, σ̂²=0.5) 与 (μ=3, σ̂²=0.02)"""
    first = np.tile([-0.5, 0.5], (n_each, 1))
    second = np.tile([2.9, 3.1], (n_each, 1))
    return np.vstack([first, second])


def test_pair_mles():
    mu, sigma2 = pair_mles([[1.0, 3.0], [2.0, 2.0]], sigma2_floor=1e-6)
    np.testing.assert_allclose(mu, [2.0, 2.0])
    np.testing.assert_allclose(sigma2, [2.0, 1e-6])


def test_degenerate_pairs_single_point():
    """所有观测对相同: 返回单点网格"""
    grid = select_grid_bivariate(np.tile([1.0, 1.0], (10, 1)), m=5)
    assert grid.size == 1
    np.testing.assert_allclose(grid.points, [[1.0, 1e-6]])


def test_planted_clusters():
    grid = select_grid_bivariate(planted_pairs(), m=2, seed=0, n_init=3)
    assert grid.size == 2
    expected = np.array([[0.0, 0.5], [3.0, 0.02]])
    for point in expected:
        distance = np.min(np.abs(grid.points - point).max(axis=1))
        assert distance < 0.05


def test_distinct_count_reduces_m():
    """不同MLE的个数少于m时网格点数减为不同值的个数"""
    grid = select_grid_bivariate(planted_pairs(), m=6, seed=0, n_init=2)
    assert grid.size == 2


def test_grid_size_validation():
    pairs = planted_pairs(3)
    with pytest.raises(InputError):
        select_grid_bivariate(pairs, m=7)
    with pytest.raises(InputError):
        select_grid_bivariate(pairs, m=0)
    with pytest.raises(InputError):
        select_grid_bivariate([1.0, 2.0, 3.0], m=1)


def test_grid_permutation_invariance():
    """观测顺序不影响所选网格"""
    pairs = np.random.default_rng(0).normal(size=(60, 2))
    a = select_grid_bivariate(pairs, m=5, seed=0, n_init=3)
    perm = np.random.default_rng(1).permutation(60)
    b = select_grid_bivariate(pairs[perm], m=5, seed=0, n_init=3)
    np.testing.assert_array_equal(a.points, b.points)
    assert np.all(a.points[:, 1] > 0)


def test_standardized_coordinates():
    grid = Grid(np.array([[0.0, 1.0], [2.0, np.e], [4.0, np.e ** 2]]))
    Z = standardized_coordinates(grid.points, grid_feature_stats(grid))
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1.0)


def test_mle_feature_stats():
    """(μ̂, log σ̂²)的均值与标准差"""
    pairs = np.array([[-1.0, 1.0], [2.0, 2.0 + np.sqrt(2.0)]])
    center, scale = mle_feature_stats(pairs)
    # μ̂ = (0, 2 + √2/2), σ̂² = (2, 1)
    np.testing.assert_allclose(center, [(2.0 + np.sqrt(2.0) / 2) / 2, np.log(2.0) / 2])
    np.testing.assert_allclose(scale, [(2.0 + np.sqrt(2.0) / 2) / 2, np.log(2.0) / 2])

    Z = standardized_coordinates([[0.0, 2.0]], (center, scale))
    np.testing.assert_allclose(Z, [[-1.0, 1.0]])


def test_mass_near_atoms():
    grid = Grid(np.array([[0.0, 1.0], [2.0, 0.1], [5.0, 5.0]]))
    pmf = MixingPMF(grid, [0.2, 0.5, 0.3])
    mass = mass_near_atoms(pmf, [[0.0, 1.0], [2.0, 0.1]])
    np.testing.assert_allclose(mass, [0.2, 0.5])
    # 半径足够大时所有质量都被计入最近的原子
    assert mass_near_atoms(pmf, [[0.0, 1.0], [2.0, 0.1]], radius=100.0).sum() == pytest.approx(1.0)


def test_fit_requires_bivariate():
    sim = generate(ScenarioSpec("bi_pointmass", 40, seed=0))
    grid = select_grid_bivariate(sim.data, m=4, seed=0, n_init=2)
    cfg = TrainConfig(batch_size=20, max_epochs=1)
    with pytest.raises(InputError):
        fit_multivariate_neural_g(sim.data, grid, MlpArchitecture(1, 1, 4, grid.size), cfg)


def test_fit_small():
    sim = generate(ScenarioSpec("bi_pointmass", 100, seed=0))
    grid = select_grid_bivariate(sim.data, m=8, seed=0, n_init=2)
    cfg = TrainConfig(batch_size=50, max_epochs=3, base_step=0.01)
    result = fit_multivariate_neural_g(sim.data, grid, MlpArchitecture(2, 1, 8, grid.size), cfg)
    assert result.pmf.size == grid.size
    assert result.pmf.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.isfinite(result.final_loss)
    again = fit_multivariate_neural_g(sim.data, grid, MlpArchitecture(2, 1, 8, grid.size), cfg)
    np.testing.assert_array_equal(result.pmf.weights, again.pmf.weights)


def test_fit_standardizes_with_mle_statistics():
    """网络输入按(μ̂, log σ̂²)的统计量标准化, 而不是网格坐标的统计量"""
    sim = generate(ScenarioSpec("bi_pointmass", 100, seed=0))
    grid = select_grid_bivariate(sim.data, m=8, seed=0, n_init=2)
    cfg = TrainConfig(batch_size=50, max_epochs=1, base_step=0.01)
    result = fit_multivariate_neural_g(sim.data, grid, MlpArchitecture(2, 1, 8, grid.size), cfg)
    center, scale = mle_feature_stats(sim.data)
    np.testing.assert_allclose(result.model.input_shift, center)
    np.testing.assert_allclose(result.model.input_scale, scale)
    assert result.model.log_coords == (1,)


def test_fitted_marginals_commute():
    """二元PMF对任一坐标求和得到的边际与逐网格点累加一致, 且总和为1"""
    sim = generate(ScenarioSpec("bi_pointmass", 100, seed=1))
    grid = select_grid_bivariate(sim.data, m=8, seed=0, n_init=2)
    cfg = TrainConfig(batch_size=50, max_epochs=3, base_step=0.01)
    pmf = fit_multivariate_neural_g(sim.data, grid, MlpArchitecture(2, 1, 8, grid.size), cfg).pmf
    for axis in (0, 1):
        marginal = pmf.marginal(axis)
        assert marginal.weights.sum() == pytest.approx(1.0, abs=1e-12)
        for value, weight in zip(marginal.grid.values, marginal.weights):
            assert weight == pytest.approx(pmf.weights[pmf.grid.points[:, axis] == value].sum(), abs=1e-12)
        assert marginal.mean()[0] == pytest.approx(pmf.mean()[axis], abs=1e-12)


@pytest.mark.slow
def test_bi_nig_mu_marginal_mean():
    """正态-逆伽马先验: 拟合PMF的μ边际均值与1相差不超过0.15"""
    sim = generate(ScenarioSpec("bi_nig", 1000, seed=0))
    result = GModeler().fit_bivariate(sim.data, seed=0)
    assert result["success"]
    assert result["pmf"].marginal(0).mean()[0] == pytest.approx(1.0, abs=0.15)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
