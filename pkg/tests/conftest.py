"""
测试公共配置
慢速验收测试需要 --runslow 才会运行
"""

import sys

import pytest
from loguru import logger

from src.core.config import Config


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行耗时的验收测试")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 耗时的验收测试(需要--runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要--runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def reset_logger():
    """命令行测试会把日志重定向到临时流, 每个测试后恢复"""
    yield
    logger.remove()
    logger.add(sys.stderr, level="WARNING")


@pytest.fixture
def small_config():
    """桌面规模的配置: 小网络、少量轮数、较大步长"""
    config = Config()
    config.set("grid.m", 30)
    config.set("neural_g.hidden_layers", 1)
    config.set("neural_g.hidden_width", 8)
    config.set("neural_g.max_epochs", 3)
    config.set("neural_g.batch_size", 50)
    config.set("neural_g.base_step", 0.01)
    config.set("multivariate.m", 10)
    config.set("multivariate.kmeans_n_init", 2)
    config.set("metrics.quadrature_points", 2001)
    config.set("system.num_workers", 1)
    config.set("system.seed", 0)
    return config
