"""
读写模块
数据、密度、后验摘要与结果表的CSV读写, 以及模型和指标的JSON读写
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .baselines import EfronParams, NpmleResult, SplineBasis
from .density import Grid, MixingPMF
from .exceptions import InputError


PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def _read_csv(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError as e:
        raise InputError(f"文件不存在: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f"CSV解析失败: {path}: {e}") from e


def _numeric(frame: pd.DataFrame, columns, path: PathLike) -> np.ndarray:
    try:
        values = frame[columns].to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise InputError(f"{path} 中存在非数值项: {e}") from e
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path} 中存在缺失或非有限值")
    return values


def _replicate_columns(frame: pd.DataFrame, prefix: str):
    cols = []
    k = 1
    while f"{prefix}{k}" in frame.columns:
        cols.append(f"{prefix}{k}")
        k += 1
    return cols


def read_data_csv(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    读取观测CSV: 列y(一元)或y1,y2,…(成对); 可选的theta或theta1,theta2列为真实参数

    Returns:
        (观测, 真实θ或None)
    """
    frame = _read_csv(path)
    if "y" in frame.columns:
        data = _numeric(frame, ["y"], path)[:, 0]
    else:
        cols = _replicate_columns(frame, "y")
        if not cols:
            raise InputError(f"{path} 缺少y或y1,y2列, 实际列: {list(frame.columns)}")
        data = _numeric(frame, cols, path)
    thetas = None
    if "theta" in frame.columns:
        thetas = _numeric(frame, ["theta"], path)[:, 0]
    elif "theta1" in frame.columns:
        thetas = _numeric(frame, _replicate_columns(frame, "theta"), path)
    if data.shape[0] == 0:
        raise InputError(f"{path} 中没有观测")
    logger.debug(f"读取数据: {path}, n={data.shape[0]}")
    return data, thetas


def write_data_csv(path: PathLike, data: np.ndarray, thetas: Optional[np.ndarray] = None):
    """写出观测CSV, thetas非空时附加真实参数列"""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        frame = pd.DataFrame({"y": data})
    else:
        frame = pd.DataFrame({f"y{k + 1}": data[:, k] for k in range(data.shape[1])})
    if thetas is not None:
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.ndim == 1:
            frame["theta"] = thetas
        else:
            for k in range(thetas.shape[1]):
                frame[f"theta{k + 1}"] = thetas[:, k]
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"数据已保存到: {path}")


def density_frame(pmf: MixingPMF) -> pd.DataFrame:
    points = pmf.grid.points
    if pmf.grid.dim == 1:
        frame = pd.DataFrame({"theta": points[:, 0]})
    else:
        frame = pd.DataFrame({f"theta{k + 1}": points[:, k] for k in range(pmf.grid.dim)})
    frame["prob"] = pmf.weights
    return frame


def write_density_csv(path: PathLike, pmf: MixingPMF):
    """写出密度CSV: theta,prob 或 theta1,theta2,prob"""
    density_frame(pmf).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"密度已保存到: {path}")


def read_density_csv(path: PathLike) -> MixingPMF:
    """读取密度CSV"""
    frame = _read_csv(path)
    if "prob" not in frame.columns:
        raise InputError(f"{path} 缺少prob列")
    cols = ["theta"] if "theta" in frame.columns else _replicate_columns(frame, "theta")
    if not cols:
        raise InputError(f"{path} 缺少theta列")
    points = _numeric(frame, cols, path)
    probs = _numeric(frame, ["prob"], path)[:, 0]
    if points.shape[1] == 1:
        order = np.argsort(points[:, 0], kind="stable")
        points, probs = points[order], probs[order]
    return MixingPMF(Grid(points), probs)


def write_posterior_csv(path: PathLike, data: np.ndarray, means: np.ndarray, intervals: np.ndarray):
    """写出后验摘要CSV: i,y,post_mean,lo,hi"""
    frame = pd.DataFrame({
        "i": np.arange(len(means)),
        "y": np.asarray(data, dtype=np.float64),
        "post_mean": means,
        "lo": intervals[:, 0],
        "hi": intervals[:, 1],
    })
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"后验摘要已保存到: {path}")


def write_table_csv(path: PathLike, frame: pd.DataFrame):
    """写出结果表"""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"结果表已保存到: {path}")


def write_samples_csv(path: PathLike, draws: np.ndarray):
    """写出先验抽样CSV: theta 或 theta1,theta2"""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 1:
        frame = pd.DataFrame({"theta": draws})
    else:
        frame = pd.DataFrame({f"theta{k + 1}": draws[:, k] for k in range(draws.shape[1])})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"先验抽样已保存到: {path}")


def write_json(path: PathLike, payload: Dict[str, Any]):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, ensure_ascii=False)
    logger.info(f"JSON已保存到: {path}")


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InputError(f"文件不存在: {path}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"JSON解析失败: {path}: {e}") from e


def efron_to_dict(params: EfronParams, basis: SplineBasis) -> Dict[str, Any]:
    return {
        "format": "mixdens-efron",
        "df": basis.df,
        "lambda": params.lam,
        "alpha": [float(a) for a in params.alpha],
        "knots": [float(k) for k in basis.knots],
        "converged": params.converged,
        "iterations": params.iterations,
    }


def npmle_to_dict(result: NpmleResult) -> Dict[str, Any]:
    return {
        "format": "mixdens-npmle",
        "iterations": result.iterations,
        "converged": result.converged,
        "final_nll": result.nll_history[-1],
    }
