"""
配置管理模块
负责加载和管理估计器、指标与系统的配置参数
"""

import copy
import math
import os
import yaml
from typing import Dict, Any, Optional
from pathlib import Path
from dotenv import load_dotenv
from loguru import logger

from .exceptions import InputError


SEED_ENV_VAR = "MIXDENS_SEED"


class Config:
    """配置管理类"""

    REQUIRED_SECTIONS = ["grid", "kernel", "neural_g", "npmle", "efron",
                         "metrics", "multivariate", "system"]

    def __init__(self, config_path: Optional[str] = None):
        """
        初始化配置管理器

        Args:
            config_path: 配置文件路径(YAML或JSON),如果为None则使用默认配置
        """
        self.config_path = config_path
        self.config = self._load_config()
        self._validate_config()

    def _load_config(self) -> Dict[str, Any]:
        """
        加载配置文件

        未指定路径时读取默认配置; 显式指定的文件不存在或无法解析时抛出InputError

        Returns:
            配置字典
        """
        default_config_path = Path(__file__).parent.parent.parent / "config" / "default_config.yaml"

        if self.config_path is None:
            return self._load_default_file(default_config_path)

        config_path = Path(self.config_path)
        if not config_path.is_file():
            raise InputError(f"配置文件不存在: {config_path}")

        # YAML是JSON的超集,JSON配置文件可以直接用safe_load读取
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                config = yaml.safe_load(f)
        except (OSError, UnicodeDecodeError, yaml.YAMLError) as e:
            raise InputError(f"加载配置文件失败: {config_path}: {e}") from e

        if config is None:
            config = {}
        if not isinstance(config, dict):
            raise InputError(f"配置文件顶层必须是映射: {config_path}")
        logger.info(f"成功加载配置文件: {config_path}")
        return _deep_merge(self._load_default_file(default_config_path), config)

    def _load_default_file(self, path: Path) -> Dict[str, Any]:
        """读取默认配置文件,失败时返回内置默认值"""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        except Exception as e:
            logger.warning(f"默认配置文件读取失败: {e}")
            return self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """
        获取内置默认配置

        Returns:
            默认配置字典
        """
        return {
            "grid": {"m": 100, "poisson_floor": 1e-3},
            "kernel": {"family": "normal", "sigma": 1.0, "replicates": 2},
            "neural_g": {
                "hidden_layers": 4,
                "hidden_width": 500,
                "weight": 0.6,
                "max_epochs": 8000,
                "batch_size": None,
                "batch_cap": 512,
                "base_step": 0.0003,
                "step_decay": 0.2,
                "stop_tol": 0.01,
                "stop_lag": 10,
                "eval_every": 1,
                "standardize_inputs": True,
                "log_every": 500
            },
            "npmle": {"max_iters": 20000, "tol": 1e-10},
            "efron": {"df": 5, "lambda": 1.0, "max_iters": 5000, "grad_tol": 1e-6},
            "metrics": {
                "w1_points": 2001,
                "w1_margin": 1.0,
                "quadrature_points": 10001,
                "quadrature_mass": 1e-8,
                "cv_folds": 10,
                "level": 0.95
            },
            "multivariate": {"m": 50, "kmeans_n_init": 10, "sigma2_floor": 1e-6},
            "system": {
                "seed": 0,
                "num_workers": 4,
                "log_level": "INFO"
            }
        }

    def _validate_config(self):
        """验证配置参数"""
        for section in self.REQUIRED_SECTIONS:
            if section not in self.config:
                logger.warning(f"缺少配置节: {section}, 使用默认值")
                self.config[section] = self._get_default_config().get(section, {})

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        获取配置值(支持嵌套路径)

        Args:
            key_path: 配置键路径,用.分隔,如 "neural_g.hidden_width"
            default: 默认值

        Returns:
            配置值
        """
        keys = key_path.split('.')
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def set(self, key_path: str, value: Any):
        """
        设置配置值(支持嵌套路径)

        Args:
            key_path: 配置键路径,用.分隔
            value: 配置值
        """
        keys = key_path.split('.')
        config = self.config

        for key in keys[:-1]:
            if key not in config:
                config[key] = {}
            config = config[key]

        config[keys[-1]] = value
        logger.debug(f"设置配置: {key_path} = {value}")

    def update(self, overrides: Dict[str, Any]):
        """
        用命令行参数覆盖配置,值为None的键视为未提供

        Args:
            overrides: {"neural_g.weight": 0.6, ...} 形式的字典
        """
        for key_path, value in overrides.items():
            if value is not None:
                self.set(key_path, value)

    def seed(self, override: Optional[int] = None) -> int:
        """
        解析主随机种子: 参数 > 环境变量MIXDENS_SEED > system.seed

        Args:
            override: 命令行传入的种子

        Returns:
            主随机种子
        """
        if override is not None:
            return int(override)
        load_dotenv()
        env_seed = os.getenv(SEED_ENV_VAR)
        if env_seed:
            try:
                return int(env_seed)
            except ValueError:
                logger.warning(f"环境变量{SEED_ENV_VAR}不是整数: {env_seed}, 忽略")
        return int(self.get("system.seed", 0))

    def batch_size(self, n: int) -> int:
        """
        计算小批量大小: 未指定时取ceil(n/10)并以batch_cap为上限

        Args:
            n: 样本量

        Returns:
            批大小S
        """
        size = self.get("neural_g.batch_size")
        if size:
            return int(size)
        cap = int(self.get("neural_g.batch_cap", 512))
        return max(1, min(math.ceil(n / 10), cap))

    def train_config(self, n: int, seed: Optional[int] = None):
        """
        根据neural_g配置节构建TrainConfig

        Args:
            n: 样本量(用于推导默认批大小)
            seed: 随机种子

        Returns:
            TrainConfig
        """
        from .optimizer import TrainConfig

        section = self.get("neural_g", {})
        return TrainConfig(
            batch_size=self.batch_size(n),
            max_epochs=int(section.get("max_epochs", 8000)),
            weight=float(section.get("weight", 0.6)),
            base_step=float(section.get("base_step", 0.0003)),
            step_decay=float(section.get("step_decay", 0.2)),
            stop_tol=float(section.get("stop_tol", 0.01)),
            stop_lag=int(section.get("stop_lag", 10)),
            seed=self.seed(seed),
            eval_every=int(section.get("eval_every", 1)),
            standardize_inputs=bool(section.get("standardize_inputs", True)),
            log_every=int(section.get("log_every", 500)),
        )

    def architecture(self, output_dim: int, input_dim: int = 1):
        """
        根据neural_g配置节构建MlpArchitecture

        Args:
            output_dim: 网格大小m
            input_dim: 网格维度d

        Returns:
            MlpArchitecture
        """
        from .mlp import MlpArchitecture

        return MlpArchitecture(
            input_dim=input_dim,
            hidden_layers=int(self.get("neural_g.hidden_layers", 4)),
            hidden_width=int(self.get("neural_g.hidden_width", 500)),
            output_dim=output_dim,
        )

    def save(self, output_path: Optional[str] = None):
        """
        保存配置到文件

        Args:
            output_path: 输出路径,如果为None则覆盖原配置文件
        """
        if output_path is None:
            output_path = self.config_path

        if output_path is None:
            raise InputError("未指定配置输出路径")

        try:
            with open(output_path, 'w', encoding='utf-8') as f:
                yaml.dump(self.config, f, allow_unicode=True, default_flow_style=False)
        except OSError as e:
            raise InputError(f"保存配置失败: {output_path}: {e}") from e
        logger.info(f"配置已保存到: {output_path}")

    def __getitem__(self, key: str) -> Any:
        """支持字典访问方式"""
        return self.config.get(key)

    def __setitem__(self, key: str, value: Any):
        """支持字典赋值方式"""
        self.config[key] = value

    def __repr__(self) -> str:
        return f"Config(path={self.config_path})"


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并: override中的键覆盖base"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
