"""
单元测试 - 基线估计器模块(NPMLE与Efron's g)
"""

import numpy as np
import pytest

from src.core.baselines import (SplineBasis, efron_fit, efron_objective, efron_pmf, npmle_em,
                                npmle_fit, spline_basis)
from src.core.density import Grid, KernelMatrix, KernelSpec, MixingPMF, build_kernel_matrix, mixture_nll
from src.core.exceptions import InputError
from src.core.simulate import ScenarioSpec, default_grid, generate


def lattice_min_nll(values: np.ndarray, step: float = 0.01) -> float:
    """在步长为step的三点单纯形重心格点上穷举最小负对数似然"""
    k = int(round(1 / step))
    a, b = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = a + b <= k
    W = np.column_stack([a[keep], b[keep], k - a[keep] - b[keep]]) / k
    mix = values @ W.T
    with np.errstate(divide="ignore"):
        nll = -np.mean(np.log(mix), axis=0)
    return float(np.min(nll))


@pytest.fixture
def normal_instance():
    rng = np.random.default_rng(1)
    y = np.concatenate([rng.normal(-1.5, 1.0, 150), rng.normal(1.5, 1.0, 150)])
    grid = default_grid(y, 40)
    return y, grid, build_kernel_matrix(KernelSpec.normal(1.0), y, grid)


def test_npmle_single_point():
    """m=1时一次迭代后w=[1]"""
    grid = Grid(np.array([0.0]))
    F = build_kernel_matrix(KernelSpec.normal(1.0), [0.3, -1.0, 2.0], grid)
    result = npmle_fit(F, grid)
    np.testing.assert_allclose(result.pmf.weights, [1.0])
    assert result.iterations == 1
    assert result.converged


def test_npmle_symmetric_fixed_point():
    """对称数据在网格{−1, 1}上的解为[0.5, 0.5]"""
    grid = Grid(np.array([-1.0, 1.0]))
    y = np.array([-2.0, -0.5, 0.3, 0.5, 2.0, -0.3])
    F = build_kernel_matrix(KernelSpec.normal(1.0), y, grid)
    np.testing.assert_allclose(npmle_em(F, grid).weights, [0.5, 0.5], atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_npmle_matches_lattice_search(seed):
    """m=3, n=10 随机实例: EM结果与重心格点穷举相差不超过1e-3, 且NLL单调不增"""
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.05, 1.0, size=(10, 3))
    grid = Grid(np.array([0.0, 1.0, 2.0]))
    result = npmle_fit(KernelMatrix(values), grid)
    assert abs(result.nll_history[-1] - lattice_min_nll(values)) < 1e-3
    assert np.all(np.diff(result.nll_history) <= 1e-13)


def test_npmle_monotone_and_deterministic(normal_instance):
    _, grid, F = normal_instance
    a = npmle_fit(F, grid, max_iters=500)
    b = npmle_fit(F, grid, max_iters=500)
    assert np.all(np.diff(a.nll_history) <= 1e-13)
    assert np.array_equal(a.pmf.weights, b.pmf.weights)
    assert a.nll_history[-1] <= mixture_nll(F, MixingPMF.uniform(grid))


def test_npmle_dimension_mismatch(normal_instance):
    _, _, F = normal_instance
    with pytest.raises(InputError):
        npmle_fit(F, Grid.linspace(0.0, 1.0, 3))


def test_spline_basis_shape_and_normalization():
    """m×p矩阵, 列中心化且单位范数"""
    grid = Grid.linspace(-3.0, 3.0, 50)
    basis = spline_basis(grid, 5)
    assert basis.Q.shape == (50, 5)
    assert basis.df == 5
    np.testing.assert_allclose(basis.Q.sum(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(basis.Q, axis=0), 1.0, atol=1e-12)
    assert basis.knots[0] == -3.0
    assert basis.knots[-1] == 3.0
    assert len(basis.knots) == 6


def test_spline_basis_contains_linear_functions():
    """(中心化的)线性函数位于列空间内"""
    grid = Grid(np.sort(np.random.default_rng(2).uniform(0.0, 4.0, size=60)))
    Q = spline_basis(grid, 5).Q
    target = 2.5 * grid.values - 1.0
    target = target - target.mean()
    coef, *_ = np.linalg.lstsq(Q, target, rcond=None)
    assert np.max(np.abs(Q @ coef - target)) < 1e-8


def test_spline_basis_reflection():
    """把网格反射后重新构建, 得到与原基行反转后相同的列空间"""
    grid = Grid(np.sort(np.random.default_rng(3).uniform(-2.0, 3.0, size=40)))
    reflected = Grid(-grid.values[::-1])
    Q = spline_basis(grid, 6).Q
    R = spline_basis(reflected, 6).Q[::-1]
    projection = Q @ np.linalg.pinv(Q)
    np.testing.assert_allclose(projection @ R, R, atol=1e-8)


def test_spline_basis_validation():
    with pytest.raises(InputError):
        spline_basis(Grid.linspace(0.0, 1.0, 5), 5)
    with pytest.raises(InputError):
        spline_basis(Grid.linspace(0.0, 1.0, 5), 0)
    with pytest.raises(InputError):
        spline_basis(Grid(np.array([[0.0, 1.0], [1.0, 2.0]])), 1)


def test_efron_pmf_examples():
    """α=0为均匀; 两点指数倾斜"""
    basis = spline_basis(Grid.linspace(0.0, 1.0, 10), 3)
    np.testing.assert_allclose(efron_pmf(basis, np.zeros(3)).weights, np.full(10, 0.1), atol=1e-15)

    tilt = SplineBasis(np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(efron_pmf(tilt, [np.log(3.0)]).weights, [0.25, 0.75], atol=1e-12)


def test_efron_pmf_matches_direct():
    rng = np.random.default_rng(4)
    Q = rng.normal(size=(12, 4))
    alpha = rng.normal(size=4)
    direct = np.exp(Q @ alpha)
    direct /= direct.sum()
    np.testing.assert_allclose(efron_pmf(SplineBasis(Q), alpha).weights, direct, atol=1e-12)
    with pytest.raises(InputError):
        efron_pmf(SplineBasis(Q), np.zeros(3))


def test_efron_large_penalty_gives_uniform(normal_instance):
    """λ很大时α=0, PMF为均匀"""
    _, grid, F = normal_instance
    basis = spline_basis(grid, 5)
    pmf, params = efron_fit(F, basis, 1e6, grid)
    np.testing.assert_allclose(params.alpha, 0.0)
    np.testing.assert_allclose(pmf.weights, np.full(grid.size, 1 / grid.size), atol=1e-3)


def test_efron_fit_ascends(normal_instance):
    """返回的α处目标不低于α=0处, 且附近没有明显的上升方向"""
    _, grid, F = normal_instance
    basis = spline_basis(grid, 5)
    pmf, params = efron_fit(F, basis, 1.0, grid)
    best = efron_objective(F, basis, params.alpha, 1.0)
    assert best >= efron_objective(F, basis, np.zeros(5), 1.0)
    assert pmf.weights.sum() == pytest.approx(1.0, abs=1e-10)
    rng = np.random.default_rng(5)
    for _ in range(10):
        u = rng.normal(size=5)
        u /= np.linalg.norm(u)
        assert efron_objective(F, basis, params.alpha + 1e-3 * u, 1.0) <= best + 1e-3


def test_efron_unreachable_tolerance_not_converged(normal_instance):
    """梯度阈值低于浮点精度时线搜索最终下溢, 结果不标记为收敛"""
    _, grid, F = normal_instance
    basis = spline_basis(grid, 5)
    pmf, params = efron_fit(F, basis, 1.0, grid, grad_tol=1e-16)
    assert not params.converged
    assert np.all(np.isfinite(params.alpha))
    assert efron_objective(F, basis, params.alpha, 1.0) >= efron_objective(F, basis, np.zeros(5), 1.0)
    assert pmf.weights.sum() == pytest.approx(1.0, abs=1e-10)


def test_efron_rich_basis_close_to_npmle():
    """λ=0且p=m−1时, 拟合NLL不超过NPMLE的NLL + 1e-2"""
    rng = np.random.default_rng(6)
    y = np.concatenate([rng.normal(-1.0, 1.0, 30), rng.normal(2.0, 1.0, 30)])
    grid = default_grid(y, 6)
    F = build_kernel_matrix(KernelSpec.normal(1.0), y, grid)
    pmf, _ = efron_fit(F, spline_basis(grid, 5), 0.0, grid, max_iters=20000)
    assert mixture_nll(F, pmf) <= mixture_nll(F, npmle_em(F, grid)) + 1e-2


def test_efron_rejects_negative_penalty(normal_instance):
    _, grid, F = normal_instance
    with pytest.raises(InputError):
        efron_fit(F, spline_basis(grid, 5), -1.0, grid)


@pytest.mark.slow
def test_npmle_pointmass_recovery():
    """点质量先验: NPMLE的质量集中在{−5, 0, 5}附近"""
    sim = generate(ScenarioSpec("pointmass", 2000, seed=3))
    grid = default_grid(sim.data, 100)
    F = build_kernel_matrix(sim.kernel, sim.data, grid)
    pmf = npmle_em(F, grid)
    cell = grid.values[1] - grid.values[0]
    near = np.zeros(grid.size, dtype=bool)
    for atom in (-5.0, 0.0, 5.0):
        near |= np.abs(grid.values - atom) <= 1.5 * cell
    assert pmf.weights[near].sum() >= 0.9


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
