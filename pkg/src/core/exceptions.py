"""
异常定义模块
库函数统一抛出以下语义化异常,由GModeler和命令行在边界处转换为结果字典或退出码
"""

from typing import Optional


class MixDensError(Exception):
    """本项目所有异常的基类"""


class InputError(MixDensError, ValueError):
    """输入违反约定: 取值域、形状或参数非法"""


class KernelSupportError(InputError):
    """违反核支撑条件: 某个观测在所有网格点上的核密度均为零"""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class DegenerateDataError(InputError):
    """数据退化(零方差、零极差等),无法继续计算"""


class NumericalError(MixDensError, FloatingPointError):
    """数值异常: 损失或梯度出现非有限值"""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class TrainingError(NumericalError):
    """训练循环中出现非有限损失或梯度"""
