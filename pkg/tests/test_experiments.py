"""
单元测试 - 实验模块
"""

import numpy as np
import pytest

from src.core.density import Grid, KernelSpec, MixingPMF
from src.core.exceptions import InputError
from src.core.experiments import (METRIC_KEYS, evaluate_density, map_replications, metrics_record,
                                  run_coverage, run_cv, run_replication, run_replications,
                                  run_sensitivity, with_architecture)
from src.core.gmodeler import GModeler
from src.core.simulate import ScenarioSpec, derive_seed, generate, scenario_truth


@pytest.fixture
def modeler(small_config):
    return GModeler(small_config)


def test_metrics_record():
    record = metrics_record(w1=0.1, seed=3)
    assert list(record) == list(METRIC_KEYS)
    assert record["w1"] == 0.1
    assert record["mae"] is None


def test_map_replications_order():
    items = list(range(10))
    assert map_replications(lambda x: x * x, items) == [x * x for x in items]
    assert map_replications(lambda x: x * x, items, n_jobs=4) == [x * x for x in items]


def test_evaluate_density_univariate(small_config):
    sim = generate(ScenarioSpec("uniform", 100, seed=0))
    pmf = MixingPMF.uniform(Grid.linspace(-2.0, 2.0, 201))
    record = evaluate_density(pmf, sim.prior, sim.kernel, sim.data, small_config)
    assert record["w1"] < 0.02
    assert record["w1_cell_width"] > 0
    assert record["mae"] < 0.05
    assert record["n"] == 100
    assert record["m"] == 201

    no_data = evaluate_density(pmf, sim.prior, sim.kernel, config=small_config)
    assert no_data["mae"] is None
    assert no_data["w1"] == record["w1"]


def test_evaluate_density_nig(small_config):
    sim = generate(ScenarioSpec("bi_nig", 50, seed=0))
    pmf = MixingPMF.uniform(Grid(np.array([[0.0, 0.5], [1.0, 1.0]])))
    record = evaluate_density(pmf, sim.prior, sim.kernel, sim.data, small_config)
    assert record["w1"] is None
    assert record["mae"] is None


@pytest.mark.parametrize("estimator", ["npmle", "efron", "neuralg"])
def test_run_replication(modeler, estimator):
    record = run_replication(modeler, "uniform", 100, seed=4, estimator=estimator)
    assert record["scenario"] == "uniform"
    assert record["estimator"] == estimator
    assert record["seed"] == 4
    assert np.isfinite(record["w1"])
    assert np.isfinite(record["mae"])
    assert record["pmf"].size == 30


def test_run_replication_coverage(modeler):
    record = run_replication(modeler, "gaussian", 100, seed=0, estimator="npmle", coverage=True)
    assert 0.0 <= record["ecp"] <= 1.0
    assert record["width"] > 0


def test_run_replication_bivariate(modeler):
    record = run_replication(modeler, "bi_pointmass", 80, seed=0)
    assert len(record["atom_mass"]) == 2
    assert record["pmf"].grid.dim == 2
    with pytest.raises(InputError):
        run_replication(modeler, "bi_pointmass", 80, seed=0, estimator="npmle")


def test_run_replications_seeds(modeler):
    serial = run_replications(modeler, "gaussian", 60, reps=3, master_seed=7, estimator="npmle")
    parallel = run_replications(modeler, "gaussian", 60, reps=3, master_seed=7, estimator="npmle",
                                n_jobs=3)
    assert [r["seed"] for r in serial] == [derive_seed(7, r) for r in range(3)]
    assert [r["w1"] for r in serial] == [r["w1"] for r in parallel]
    with pytest.raises(InputError):
        run_replications(modeler, "gaussian", 60, reps=0, master_seed=7)


def test_run_coverage(modeler):
    calls = []
    table = run_coverage(modeler, "gaussian", [50, 80], reps=2, master_seed=0, estimator="npmle",
                         on_progress=lambda: calls.append(1))
    assert list(table.columns) == ["n", "ecp_mean", "width_mean"]
    assert table["n"].tolist() == [50, 80]
    assert table["ecp_mean"].between(0.0, 1.0).all()
    assert len(calls) == 2
    with pytest.raises(InputError):
        run_coverage(modeler, "gaussian", [], reps=1, master_seed=0)


def test_with_architecture(modeler):
    changed = with_architecture(modeler, 2, 16)
    assert changed.config.get("neural_g.hidden_layers") == 2
    assert changed.config.get("neural_g.hidden_width") == 16
    assert modeler.config.get("neural_g.hidden_layers") == 1


def test_run_sensitivity(modeler):
    table = run_sensitivity(modeler, "uniform", 80, layers=[1, 2], widths=[4], reps=1, master_seed=0)
    assert list(table.columns) == ["L", "h", "w1_mean", "mae_mean"]
    assert table.shape == (2, 4)
    assert table["L"].tolist() == [1, 2]
    assert np.all(np.isfinite(table["w1_mean"]))
    with pytest.raises(InputError):
        run_sensitivity(modeler, "uniform", 80, layers=[], widths=[4], reps=1, master_seed=0)


def test_run_cv(modeler):
    counts = generate(ScenarioSpec("poisson_mix", 150, seed=1)).data
    first = run_cv(modeler, counts, KernelSpec.poisson(), "npmle", K=5, seed=3)
    second = run_cv(modeler, counts, KernelSpec.poisson(), "npmle", K=5, seed=3)
    assert first["K"] == 5
    assert first["n"] == 150
    assert np.isfinite(first["pll"])
    assert first["chi2_mae"] is not None
    assert first["pll"] == second["pll"]
    assert first["chi2_mae"] == second["chi2_mae"]

    y = generate(ScenarioSpec("gaussian", 60, seed=1)).data
    normal = run_cv(modeler, y, scenario_truth("gaussian")[1], "npmle", K=3)
    assert normal["chi2_mae"] is None
    with pytest.raises(InputError):
        run_cv(modeler, y, KernelSpec.normal(1.0), "npmle", K=61)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
