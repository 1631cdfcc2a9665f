"""
单元测试 - 后验推断模块
"""

import numpy as np
import pytest
from scipy import stats

from src.core.density import Grid, KernelMatrix, KernelSpec, MixingPMF, build_kernel_matrix
from src.core.exceptions import InputError, NumericalError
from src.core.posterior import (PosteriorPMF, credible_interval, empirical_coverage, posterior_mean,
                                posterior_pmf, summarize)


@pytest.fixture
def conjugate():
    """N(0,1)先验在[−8, 8]上2001点离散化, 正态核σ=1"""
    grid = Grid.linspace(-8.0, 8.0, 2001)
    prior = MixingPMF.normalized(grid, stats.norm.pdf(grid.values))
    y = np.random.default_rng(0).uniform(-3.0, 3.0, size=100)
    F = build_kernel_matrix(KernelSpec.normal(1.0), y, grid)
    return y, grid, prior, F


def test_point_mass_prior():
    """δ先验的后验仍为δ, 均值与区间都在该点"""
    grid = Grid.linspace(-1.0, 1.0, 5)
    prior = MixingPMF.point_mass(grid, 3)
    F = build_kernel_matrix(KernelSpec.normal(1.0), [-2.0, 0.0, 3.0], grid)
    post = posterior_pmf(F, prior)
    for i in range(3):
        np.testing.assert_allclose(post.row(i).weights, prior.weights)
    np.testing.assert_allclose(posterior_mean(post), 0.5)
    np.testing.assert_allclose(credible_interval(post), [[0.5, 0.5]] * 3)


def test_symmetric_posterior():
    """y=0, 网格{−1, 1}, 均匀先验 → 后验[0.5, 0.5], 均值0"""
    grid = Grid(np.array([-1.0, 1.0]))
    F = build_kernel_matrix(KernelSpec.normal(1.0), [0.0], grid)
    post = posterior_pmf(F, MixingPMF.uniform(grid))
    np.testing.assert_allclose(post.weights, [[0.5, 0.5]], atol=1e-15)
    assert posterior_mean(post)[0] == pytest.approx(0.0, abs=1e-15)


def test_posterior_matches_bayes_rule():
    """随机实例与逐元素贝叶斯公式一致"""
    rng = np.random.default_rng(1)
    values = rng.uniform(0.01, 1.0, size=(7, 4))
    prior = MixingPMF(Grid.linspace(0.0, 3.0, 4), rng.dirichlet(np.ones(4)))
    post = posterior_pmf(KernelMatrix(values), prior)
    for i in range(7):
        joint = [values[i, j] * prior.weights[j] for j in range(4)]
        total = sum(joint)
        np.testing.assert_allclose(post.weights[i], [v / total for v in joint], atol=1e-12)


def test_zero_normalizer_names_row():
    F = KernelMatrix([[1.0, 0.0], [0.0, 1.0]])
    prior = MixingPMF.point_mass(Grid(np.array([0.0, 1.0])), 0)
    with pytest.raises(NumericalError) as excinfo:
        posterior_pmf(F, prior)
    assert excinfo.value.index == 1


def test_conjugate_normal_mean(conjugate):
    """正态-正态共轭: 后验均值为y/2"""
    y, grid, prior, F = conjugate
    means = posterior_mean(posterior_pmf(F, prior))
    np.testing.assert_allclose(means, y / 2, atol=1e-3)
    assert np.all(means >= grid.values[0])
    assert np.all(means <= grid.values[-1])


def test_conjugate_normal_interval(conjugate):
    """正态-正态共轭: 95%区间约为y/2 ± 1.96·√0.5"""
    y, grid, prior, F = conjugate
    intervals = credible_interval(posterior_pmf(F, prior), 0.95)
    half = stats.norm.ppf(0.975) * np.sqrt(0.5)
    cell = grid.values[1] - grid.values[0]
    np.testing.assert_allclose(intervals[:, 0], y / 2 - half, atol=2 * cell)
    np.testing.assert_allclose(intervals[:, 1], y / 2 + half, atol=2 * cell)


def test_uniform_posterior_quantiles():
    """[0,1]上100点的均匀后验: lo在索引2, hi在索引97"""
    grid = Grid.linspace(0.0, 1.0, 100)
    post = PosteriorPMF(grid, np.full((1, 100), 0.01))
    lo, hi = credible_interval(post, 0.95)[0]
    assert lo == grid.values[2]
    assert hi == grid.values[97]


def test_interval_hand_example():
    """CDF [0.01, 0.03, 0.97, 0.99, 1] → (1, 3)"""
    grid = Grid(np.arange(5, dtype=float))
    post = PosteriorPMF(grid, np.array([[0.01, 0.02, 0.94, 0.02, 0.01]]))
    np.testing.assert_allclose(credible_interval(post, 0.95), [[1.0, 3.0]])


def test_interval_full_level_spans_support():
    """水平为1时区间覆盖全部正质量的网格点"""
    grid = Grid(np.arange(6, dtype=float))
    post = PosteriorPMF(grid, np.array([[0.0, 0.2, 0.3, 0.5, 0.0, 0.0]]))
    np.testing.assert_allclose(credible_interval(post, 1.0), [[1.0, 3.0]])


def test_intervals_nested_in_level(conjugate):
    """99%区间包含95%区间"""
    _, _, prior, F = conjugate
    post = posterior_pmf(F, prior)
    narrow = credible_interval(post, 0.95)
    wide = credible_interval(post, 0.99)
    assert np.all(wide[:, 0] <= narrow[:, 0])
    assert np.all(wide[:, 1] >= narrow[:, 1])


def test_interval_validation():
    post = PosteriorPMF(Grid.linspace(0.0, 1.0, 3), np.full((1, 3), 1 / 3))
    with pytest.raises(InputError):
        credible_interval(post, 0.0)
    with pytest.raises(InputError):
        credible_interval(post, 1.5)
    bivariate = PosteriorPMF(Grid(np.array([[0.0, 1.0], [1.0, 1.0]])), np.array([[0.5, 0.5]]))
    with pytest.raises(InputError):
        credible_interval(bivariate)


def test_bivariate_posterior_mean():
    """二元网格返回逐坐标均值"""
    grid = Grid(np.array([[0.0, 1.0], [2.0, 3.0]]))
    post = PosteriorPMF(grid, np.array([[0.5, 0.5], [1.0, 0.0]]))
    np.testing.assert_allclose(posterior_mean(post), [[1.0, 2.0], [0.0, 1.0]])


def test_empirical_coverage():
    """覆盖率为真实θ落在区间内的比例"""
    thetas = np.arange(10, dtype=float)
    covered = np.column_stack([thetas - 1, thetas + 1])
    missed = np.column_stack([thetas + 1, thetas + 2])
    assert empirical_coverage(thetas, covered) == 1.0
    assert empirical_coverage(thetas, missed) == 0.0
    half = np.vstack([covered[:5], missed[5:]])
    assert empirical_coverage(thetas, half) == 0.5
    with pytest.raises(InputError):
        empirical_coverage(thetas[:3], covered)


def test_summarize(conjugate):
    _, _, prior, F = conjugate
    post = posterior_pmf(F, prior)
    means, intervals = summarize(post)
    assert means.shape == (100,)
    assert intervals.shape == (100, 2)
    assert np.all(intervals[:, 0] <= means)
    assert np.all(means <= intervals[:, 1])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
