"""
模拟数据模块
各模拟场景的带种子生成器、真实先验对象以及默认网格
"""

from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Tuple

import numpy as np
from loguru import logger
from scipy import stats

from .density import Grid, KernelSpec, as_observations
from .exceptions import DegenerateDataError, InputError
from .metrics import TruePrior


def _uniform() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.single("uniform", stats.uniform(loc=-2.0, scale=4.0)), KernelSpec.normal(1.0)


def _piecewise() -> Tuple[TruePrior, KernelSpec]:
    components = [stats.uniform(loc=-2.0, scale=1.0),
                  stats.uniform(loc=-1.0, scale=2.0),
                  stats.uniform(loc=1.0, scale=1.0)]
    return TruePrior.mixture("piecewise", components, [0.4, 0.2, 0.4]), KernelSpec.normal(1.0)


def _gumbel() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.single("gumbel", stats.gumbel_r(loc=2.0, scale=1.0)), KernelSpec.normal(1.0)


def _bounded() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.single("bounded", stats.beta(3.0, 2.0)), KernelSpec.lognormal(0.2)


def _pointmass() -> Tuple[TruePrior, KernelSpec]:
    prior = TruePrior.atomic("pointmass", [-5.0, 0.0, 5.0], [0.3, 0.4, 0.3])
    return prior, KernelSpec.normal(0.5)


def _gaussian() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.single("gaussian", stats.norm(loc=0.0, scale=1.0)), KernelSpec.normal(1.0)


def _bi_pointmass() -> Tuple[TruePrior, KernelSpec]:
    prior = TruePrior.atomic("bi_pointmass", [[0.0, 1.0], [2.0, 0.1]], [0.2, 0.8])
    return prior, KernelSpec.location_scale(2)


def _bi_nig() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.nig(mu0=1.0, lam=1.0, shape=2.0, scale=0.5), KernelSpec.location_scale(2)


def _poisson_mix() -> Tuple[TruePrior, KernelSpec]:
    return TruePrior.atomic("poisson_mix", [2.0, 9.0], [0.5, 0.5]), KernelSpec.poisson()


SCENARIOS: Dict[str, Callable[[], Tuple[TruePrior, KernelSpec]]] = {
    "uniform": _uniform,
    "piecewise": _piecewise,
    "gumbel": _gumbel,
    "bounded": _bounded,
    "pointmass": _pointmass,
    "gaussian": _gaussian,
    "bi_pointmass": _bi_pointmass,
    "bi_nig": _bi_nig,
    "poisson_mix": _poisson_mix,
}


@dataclass(frozen=True)
class ScenarioSpec:
    """模拟场景: 名称、样本量与随机种子"""

    name: str
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise InputError(f"未知场景: {self.name}, 可选: {', '.join(SCENARIOS)}")
        if self.n < 1:
            raise InputError(f"样本量必须≥1: {self.n}")
        if self.seed < 0:
            raise InputError(f"随机种子必须非负: {self.seed}")

    @property
    def bivariate(self) -> bool:
        return self.name.startswith("bi_")


class SimulatedData(NamedTuple):
    data: np.ndarray
    thetas: np.ndarray
    prior: TruePrior
    kernel: KernelSpec


def scenario_truth(name: str) -> Tuple[TruePrior, KernelSpec]:
    """场景对应的真实先验与核"""
    if name not in SCENARIOS:
        raise InputError(f"未知场景: {name}, 可选: {', '.join(SCENARIOS)}")
    return SCENARIOS[name]()


def derive_seed(master: int, replicate: int) -> int:
    """第replicate次重复实验的种子: SeedSequence([master, replicate])的第一个状态字"""
    if master < 0 or replicate < 0:
        raise InputError(f"种子与重复序号必须非负: master={master}, replicate={replicate}")
    return int(np.random.SeedSequence([int(master), int(replicate)]).generate_state(1)[0])


def draw_observations(kernel: KernelSpec, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """给定θ_i从核中抽取观测"""
    n = thetas.shape[0]
    if kernel.family == "normal":
        return thetas + kernel.sigma * rng.standard_normal(n)
    if kernel.family == "lognormal":
        return np.exp(thetas + kernel.sigma * rng.standard_normal(n))
    if kernel.family == "poisson":
        return rng.poisson(thetas).astype(np.float64)
    mu, sigma2 = thetas[:, 0], thetas[:, 1]
    return mu[:, None] + np.sqrt(sigma2)[:, None] * rng.standard_normal((n, kernel.replicates))


def generate(spec: ScenarioSpec) -> SimulatedData:
    """
    生成模拟数据: 先从先验抽θ_i, 再从核抽y_i | θ_i

    Args:
        spec: 场景规格

    Returns:
        SimulatedData(data, thetas, prior, kernel)
    """
    prior, kernel = SCENARIOS[spec.name]()
    rng = np.random.default_rng(spec.seed)
    thetas = prior.sample(spec.n, rng)
    data = draw_observations(kernel, thetas, rng)
    logger.debug(f"生成场景{spec.name}: n={spec.n}, seed={spec.seed}")
    return SimulatedData(data, thetas, prior, kernel)


def default_grid(data, m: int = 100) -> Grid:
    """
    从min(y)到max(y)的m个等距网格点

    Args:
        data: 一维观测
        m: 网格点数, 至少为2

    Returns:
        Grid
    """
    if m < 2:
        raise InputError(f"网格点数必须≥2: {m}")
    y = np.asarray(data, dtype=np.float64).reshape(-1)
    if y.shape[0] == 0:
        raise InputError("观测不能为空")
    if not np.all(np.isfinite(y)):
        raise InputError("观测中存在非有限值")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DegenerateDataError(f"观测极差为零(全部等于{lo}), 无法构建网格")
    return Grid.linspace(lo, hi, m)


def grid_for_kernel(data, kernel: KernelSpec, m: int = 100, poisson_floor: float = 1e-3) -> Grid:
    """
    在核的参数尺度上构建默认网格: LogNormal用log(y), Poisson的零下端点替换为poisson_floor

    Args:
        data: 观测
        kernel: 核规格
        m: 网格点数
        poisson_floor: Poisson网格下端点的下限

    Returns:
        Grid
    """
    if kernel.family == "location_scale":
        raise InputError("location_scale核的网格由select_grid_bivariate选择")
    y = as_observations(kernel, data)
    if kernel.family == "lognormal":
        return default_grid(np.log(y), m)
    if kernel.family == "poisson":
        if m < 2:
            raise InputError(f"网格点数必须≥2: {m}")
        lo = max(float(y.min()), poisson_floor)
        hi = float(y.max())
        if not hi > lo:
            raise DegenerateDataError(f"计数数据极差为零, 无法构建网格: [{lo}, {hi}]")
        return Grid.linspace(lo, hi, m)
    return default_grid(y, m)
