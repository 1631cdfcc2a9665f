"""
混合密度估计工具包
Mixing Density Estimation Toolkit

用神经网络(neural-g)、NPMLE与Efron's g估计经验贝叶斯模型中的先验(混合密度)。
"""

__version__ = "1.0.0"
__author__ = "PyMixDens Developers"
__description__ = "混合密度(先验)估计工具包"

from .core.gmodeler import GModeler
from .core.config import Config

__all__ = [
    "GModeler",
    "Config",
]
