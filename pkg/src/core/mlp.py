"""
多层感知机模块
ReLU隐藏层 + 跨网格softmax输出的网络族, 提供前向计算与neural-g损失的解析梯度
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .density import Grid, KernelMatrix, MixingPMF, row_mixtures, softmax
from .exceptions import InputError, TrainingError


MODEL_FORMAT = "mixdens-mlp"


@dataclass(frozen=True)
class MlpArchitecture:
    """网络结构: 输入维度d, 隐藏层数L, 隐藏层宽度h, 输出维度m"""

    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InputError(f"网络结构参数{name}必须为正整数: {value}")

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """各层权重矩阵的形状 W^(1): h×d, …, W^(K): m×h"""
        h = self.hidden_width
        shapes = [(h, self.input_dim)]
        shapes += [(h, h)] * (self.hidden_layers - 1)
        shapes.append((self.output_dim, h))
        return shapes


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    网络参数φ = (W^(1..K), b^(1..K))

    输入先经过变换: 对log_coords中的坐标取对数, 再做(x − input_shift)/input_scale
    """

    architecture: MlpArchitecture
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    log_coords: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        d = self.architecture.input_dim
        shapes = self.architecture.layer_shapes()
        weights = tuple(np.asarray(W, dtype=np.float64) for W in self.weights)
        biases = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise InputError(f"参数层数与结构不符: 期望{len(shapes)}层")
        for k, (W, b, shape) in enumerate(zip(weights, biases, shapes)):
            if W.shape != shape or b.shape != (shape[0],):
                raise InputError(f"第{k + 1}层参数形状错误: W{W.shape}, b{b.shape}, 期望W{shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InputError(f"第{k + 1}层参数存在非有限值")
        shift = np.zeros(d) if self.input_shift is None else np.asarray(self.input_shift, dtype=np.float64)
        scale = np.ones(d) if self.input_scale is None else np.asarray(self.input_scale, dtype=np.float64)
        if shift.shape != (d,) or scale.shape != (d,) or np.any(scale <= 0):
            raise InputError("输入变换参数形状错误或尺度非正")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_scale", scale)
        object.__setattr__(self, "log_coords", tuple(int(i) for i in self.log_coords))

    @property
    def depth(self) -> int:
        return len(self.weights)

    def with_params(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> "MlpModel":
        """返回结构与输入变换相同、参数替换后的新模型"""
        return MlpModel(self.architecture, tuple(weights), tuple(biases),
                        self.input_shift, self.input_scale, self.log_coords)


@dataclass(frozen=True, eq=False)
class GradientSet:
    """与模型参数形状一致的梯度"""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "GradientSet":
        return cls(tuple(np.zeros_like(W) for W in model.weights),
                   tuple(np.zeros_like(b) for b in model.biases))

    def tensors(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(x)) for x in self.tensors())

    def flat(self) -> np.ndarray:
        """按W^(1..K), b^(1..K)顺序展平"""
        return np.concatenate([x.ravel() for x in self.tensors()])

    def combine(self, other: "GradientSet", a: float, b: float) -> "GradientSet":
        """返回 a·self + b·other"""
        return GradientSet(tuple(a * x + b * y for x, y in zip(self.weights, other.weights)),
                           tuple(a * x + b * y for x, y in zip(self.biases, other.biases)))

    def matches(self, model: MlpModel) -> bool:
        return (len(self.weights) == model.depth
                and all(g.shape == W.shape for g, W in zip(self.weights, model.weights))
                and all(g.shape == b.shape for g, b in zip(self.biases, model.biases)))


def init_model(arch: MlpArchitecture, seed: int,
               input_shift: Optional[np.ndarray] = None,
               input_scale: Optional[np.ndarray] = None,
               log_coords: Sequence[int] = ()) -> MlpModel:
    """
    随机初始化网络参数

    隐藏层权重服从N(0, 2/fan_in)(He初始化), 输出层权重为零, 偏置为零,
    因此初始输出为均匀PMF

    Args:
        arch: 网络结构
        seed: 随机种子
        input_shift: 输入平移
        input_scale: 输入尺度
        log_coords: 先取对数的输入坐标

    Returns:
        MlpModel
    """
    rng = np.random.default_rng(seed)
    shapes = arch.layer_shapes()
    weights = []
    for rows, fan_in in shapes[:-1]:
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(rows, fan_in)))
    weights.append(np.zeros(shapes[-1]))
    biases = [np.zeros(rows) for rows, _ in shapes]
    return MlpModel(arch, tuple(weights), tuple(biases), input_shift, input_scale, tuple(log_coords))


def network_inputs(model: MlpModel, grid: Grid) -> np.ndarray:
    """把网格点变换为网络输入(m, d)"""
    if grid.dim != model.architecture.input_dim:
        raise InputError(f"网格维度 {grid.dim} 与网络输入维度 {model.architecture.input_dim} 不一致")
    if grid.size != model.architecture.output_dim:
        raise InputError(f"网格大小 {grid.size} 与网络输出维度 {model.architecture.output_dim} 不一致")
    X = np.array(grid.points, dtype=np.float64)
    for idx in model.log_coords:
        X[:, idx] = np.log(X[:, idx])
    return (X - model.input_shift) / model.input_scale


def _forward(model: MlpModel, X: np.ndarray):
    """前向传播, 返回logits及反向传播所需的中间量"""
    activations = [X]
    pre_activations = []
    a = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ W.T + b
        pre_activations.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    # 第j个网格点的logit由输出层第j行给出
    logits = np.sum(model.weights[-1] * a, axis=1) + model.biases[-1]
    return logits, activations, pre_activations


def logits(model: MlpModel, grid: Grid) -> np.ndarray:
    """各网格点的softmax前标量v_φ(θ_j)"""
    return _forward(model, network_inputs(model, grid))[0]


def forward_pmf(model: MlpModel, grid: Grid) -> MixingPMF:
    """
    计算网络在网格上的PMF: 每个θ_j得到一个logit, 再对m个logit联合做softmax

    Args:
        model: 网络
        grid: 网格

    Returns:
        MixingPMF
    """
    return MixingPMF.normalized(grid, softmax(logits(model, grid)))


def loss_and_gradient(model: MlpModel, F_batch: KernelMatrix, grid: Grid,
                      batch_index: Optional[int] = None) -> Tuple[float, GradientSet]:
    """
    计算小批量负对数似然及其对全部参数的精确梯度(梯度为批内平均)

    Args:
        model: 网络
        F_batch: 小批量核矩阵(S×m)
        grid: 网格
        batch_index: 批序号, 用于异常信息

    Returns:
        (损失, 梯度)
    """
    if F_batch.m != grid.size:
        raise InputError(f"核矩阵列数 {F_batch.m} 与网格大小 {grid.size} 不一致")

    X = network_inputs(model, grid)
    v, activations, pre_activations = _forward(model, X)
    w = softmax(v)

    F = F_batch.values
    S = F.shape[0]
    mix = row_mixtures(F, w)
    if not np.all(mix > 0) or not np.all(np.isfinite(mix)):
        raise TrainingError(f"第{batch_index}批出现零混合似然, 损失非有限", index=batch_index)
    loss = float(-np.sum(np.log(mix)) / S)

    # dℓ/dw_j, 再经softmax雅可比得到dℓ/dv_j
    g = -np.sum(F / mix[:, None], axis=0) / S
    dv = w * (g - w @ g)

    K = model.depth
    grad_W: List[np.ndarray] = [None] * K
    grad_b: List[np.ndarray] = [None] * K
    grad_W[-1] = dv[:, None] * activations[-1]
    grad_b[-1] = dv.copy()

    da = dv[:, None] * model.weights[-1]
    for k in range(K - 2, -1, -1):
        # ReLU在0处的次梯度取0
        dz = da * (pre_activations[k] > 0)
        grad_W[k] = dz.T @ activations[k]
        grad_b[k] = dz.sum(axis=0)
        if k > 0:
            da = dz @ model.weights[k]

    return loss, GradientSet(tuple(grad_W), tuple(grad_b))


def construct_from_pmf(p: MixingPMF, eps: float, width: int = 1) -> MlpModel:
    """
    构造单隐藏层网络, 其输出恰为softmax(h_ε(Θ_m)), 与p的上确界误差不超过1/(1+2/ε)

    Args:
        p: 目标PMF
        eps: 精度参数
        width: 隐藏层宽度

    Returns:
        MlpModel
    """
    if not eps > 0:
        raise InputError(f"eps必须为正: {eps}")
    arch = MlpArchitecture(p.grid.dim, 1, width, p.size)
    model = init_model(arch, seed=0)
    target_logits = np.log1p(2.0 * p.size * p.weights / eps)
    biases = list(model.biases)
    biases[-1] = target_logits
    logger.debug(f"softmax平移构造: m={p.size}, eps={eps}")
    return model.with_params(model.weights, biases)


def _encode(values: np.ndarray) -> List[str]:
    return [float(x).hex() for x in np.asarray(values, dtype=np.float64).ravel()]


def _decode(values: List[str], shape) -> np.ndarray:
    return np.array([float.fromhex(x) for x in values], dtype=np.float64).reshape(shape)


def model_to_dict(model: MlpModel) -> Dict[str, Any]:
    """序列化为JSON兼容字典, 浮点数以十六进制表示以保证逐位还原"""
    arch = model.architecture
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_layers": arch.hidden_layers,
            "hidden_width": arch.hidden_width,
            "output_dim": arch.output_dim,
        },
        "input_shift": _encode(model.input_shift),
        "input_scale": _encode(model.input_scale),
        "log_coords": list(model.log_coords),
        "weight_shapes": [list(W.shape) for W in model.weights],
        "weights": [_encode(W) for W in model.weights],
        "biases": [_encode(b) for b in model.biases],
    }


def model_from_dict(payload: Dict[str, Any]) -> MlpModel:
    """从model_to_dict的输出还原模型"""
    if payload.get("format") != MODEL_FORMAT:
        raise InputError(f"不是网络模型文件: format={payload.get('format')}")
    arch = MlpArchitecture(**payload["architecture"])
    d = arch.input_dim
    weights = tuple(_decode(W, shape) for W, shape in zip(payload["weights"], payload["weight_shapes"]))
    biases = tuple(_decode(b, (len(b),)) for b in payload["biases"])
    return MlpModel(arch, weights, biases,
                    _decode(payload["input_shift"], (d,)),
                    _decode(payload["input_scale"], (d,)),
                    tuple(payload.get("log_coords", ())))


def save_model(model: MlpModel, path: Union[str, Path]):
    """保存模型JSON"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model_to_dict(model), f)
    logger.info(f"模型已保存到: {path}")


def load_model(path: Union[str, Path]) -> MlpModel:
    """读取模型JSON, 文件缺失或内容不完整时抛出InputError"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"读取模型文件失败: {path}: {e}") from e
    if not isinstance(payload, dict):
        raise InputError(f"不是网络模型文件: {path}")
    try:
        return model_from_dict(payload)
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"模型文件内容不完整: {path}: {e}") from e
