"""
单元测试 - 读写模块
"""

import numpy as np
import pytest

from src.core.baselines import npmle_fit
from src.core.density import Grid, KernelSpec, MixingPMF, build_kernel_matrix
from src.core.exceptions import InputError
from src.core.io import (density_frame, npmle_to_dict, read_data_csv, read_density_csv, read_json,
                         write_data_csv, write_density_csv, write_json)


def test_data_csv_exact(tmp_path):
    """%.17g写出后读回的值逐位相同"""
    rng = np.random.default_rng(0)
    y, theta = rng.normal(size=20), rng.normal(size=20)
    path = tmp_path / "data.csv"
    write_data_csv(path, y, theta)
    data, thetas = read_data_csv(path)
    np.testing.assert_array_equal(data, y)
    np.testing.assert_array_equal(thetas, theta)


def test_pairs_csv(tmp_path):
    pairs = np.array([[1.0, 2.0], [3.0, 4.5]])
    path = tmp_path / "pairs.csv"
    write_data_csv(path, pairs)
    data, thetas = read_data_csv(path)
    np.testing.assert_array_equal(data, pairs)
    assert thetas is None


def test_data_csv_errors(tmp_path):
    with pytest.raises(InputError):
        read_data_csv(tmp_path / "missing.csv")
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("x\n1\n", encoding="utf-8")
    with pytest.raises(InputError):
        read_data_csv(wrong)
    missing_value = tmp_path / "nan.csv"
    missing_value.write_text("y,z\n1,2\n,3\n", encoding="utf-8")
    with pytest.raises(InputError):
        read_data_csv(missing_value)


def test_density_csv_sorted(tmp_path):
    path = tmp_path / "density.csv"
    path.write_text("theta,prob\n2,0.25\n-1,0.75\n", encoding="utf-8")
    pmf = read_density_csv(path)
    np.testing.assert_array_equal(pmf.grid.values, [-1.0, 2.0])
    np.testing.assert_array_equal(pmf.weights, [0.75, 0.25])

    bad = tmp_path / "bad.csv"
    bad.write_text("theta,p\n0,1\n", encoding="utf-8")
    with pytest.raises(InputError):
        read_density_csv(bad)


def test_density_csv_bivariate(tmp_path):
    pmf = MixingPMF(Grid(np.array([[0.0, 1.0], [2.0, 0.1]])), [0.2, 0.8])
    assert list(density_frame(pmf).columns) == ["theta1", "theta2", "prob"]
    path = tmp_path / "bi.csv"
    write_density_csv(path, pmf)
    loaded = read_density_csv(path)
    np.testing.assert_array_equal(loaded.grid.points, pmf.grid.points)
    np.testing.assert_array_equal(loaded.weights, pmf.weights)


def test_json(tmp_path):
    grid = Grid.linspace(-1.0, 1.0, 3)
    F = build_kernel_matrix(KernelSpec.normal(1.0), [0.0, 0.5], grid)
    payload = npmle_to_dict(npmle_fit(F, grid, max_iters=10))
    assert payload["format"] == "mixdens-npmle"
    path = tmp_path / "model.json"
    write_json(path, payload)
    assert read_json(path) == payload

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(InputError):
        read_json(broken)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
