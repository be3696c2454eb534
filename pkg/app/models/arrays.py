from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.models.models import SpaceGrid, TimeGrid


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"ожидался массив размерности {ndim}, получено {arr.ndim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TwoTimeKernel:
    """Симметричная матрица K[i][j] = K(τ_i, τ_j) на временной сетке."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen(self.values, 2)
        if values.shape != (self.grid.size, self.grid.size):
            raise ValueError(f"размер ядра {values.shape} не совпадает с сеткой M+1={self.grid.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("ядро содержит нечисловые значения")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "TwoTimeKernel":
        return cls(grid, np.zeros((grid.size, grid.size)))

    def is_symmetric(self, atol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.values - self.values.T), initial=0.0) <= atol)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class FieldPath:
    """Реализация гауссова поля h(τ_i) или H(τ_i)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen(self.values, 1)
        if values.shape != (self.grid.size,):
            raise ValueError(f"длина траектории {values.shape[0]} не совпадает с M+1={self.grid.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("траектория поля содержит нечисловые значения")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "FieldPath":
        return cls(grid, np.zeros(grid.size))


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Корень R, R·Rᵀ = ремонтированная ковариация, и диагностика ремонта."""

    grid: TimeGrid
    root: np.ndarray
    repaired: np.ndarray
    clipped_mass: float
    jitter: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", _frozen(self.root, 2))
        object.__setattr__(self, "repaired", _frozen(self.repaired, 2))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Скалярное поле values[время][пространство]; mask помечает допустимые узлы."""

    space: SpaceGrid
    time: TimeGrid
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        values = _frozen(self.values, 2)
        if values.shape != (self.time.size, self.space.n_x):
            raise ValueError(
                f"размер {values.shape} не совпадает с сетками ({self.time.size}, {self.space.n_x})"
            )
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("маска не совпадает по размеру со значениями")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def masked_count(self) -> int:
        return 0 if self.mask is None else int(np.count_nonzero(~self.mask))

    def at_origin(self) -> float:
        """Значение в (x = 0, t = 0)."""
        return float(self.values[0, self.space.center])


@dataclass(frozen=True, eq=False)
class DriftField:
    """Оптимальный дрейф u(x_k, τ_i) = −∂ₓc, ограниченный по модулю u_max."""

    function: GridFunction
    u_max: float

    @property
    def values(self) -> np.ndarray:
        return self.function.values


@dataclass(frozen=True, eq=False)
class SinglePipeline:
    """Детерминированная часть расчёта одного агента: ψ, c, u, π и m(τ)."""

    psi: GridFunction
    cost: GridFunction
    drift: DriftField
    density: GridFunction
    m: np.ndarray
    mass_error: float


@dataclass(frozen=True, eq=False)
class HSampleResult:
    """Наблюдаемые одного агента при фиксированных h, H."""

    weight: float
    log_weight: float
    m: np.ndarray
    C: np.ndarray
    masked_nodes: int = 0
    mass_error: float = 0.0
    mean_gap_sigmas: float = 0.0
    C_stderr: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", _frozen(self.m, 1))
        object.__setattr__(self, "C", _frozen(self.C, 2))


@dataclass(frozen=True, eq=False)
class HPopulationResult:
    """⟦m⟧, ⟦C⟧, N_h и ESS популяции h при фиксированном H."""

    m: np.ndarray
    C: np.ndarray
    N_h: float
    log_N_h: float
    ess: float
    size: int


@dataclass
class RSState:
    """Текущее состояние цикла самосогласования."""

    D: TwoTimeKernel
    F: TwoTimeKernel
    iteration: int = 0
    delta_D: List[float] = field(default_factory=list)
    delta_F: List[float] = field(default_factory=list)
    ess_mean: List[float] = field(default_factory=list)
    ess_min: List[float] = field(default_factory=list)
    low_ess_fraction: List[float] = field(default_factory=list)
    clipped_mass: List[float] = field(default_factory=list)
    r0_trace: List[float] = field(default_factory=list)
    r0_stderr_trace: List[float] = field(default_factory=list)
    log_N_h: Optional[np.ndarray] = None
    m_profile: Optional[np.ndarray] = None
    r0: float = float("nan")
    r0_stderr: float = float("nan")
    kernel_term: float = float("nan")
    log_norm_term: float = float("nan")
    converged: bool = False

    @property
    def residuals(self) -> List[float]:
        return [max(d, f) for d, f in zip(self.delta_D, self.delta_F)]

    @property
    def overall_low_ess_fraction(self) -> float:
        return float(np.mean(self.low_ess_fraction)) if self.low_ess_fraction else 0.0


@dataclass(frozen=True, eq=False)
class DisorderInstance:
    """Симметричная матрица связей J_ij с нулевой диагональю."""

    N: int
    couplings: np.ndarray

    def __post_init__(self) -> None:
        couplings = _frozen(self.couplings, 2)
        if couplings.shape != (self.N, self.N):
            raise ValueError("размер матрицы связей не совпадает с N")
        if not np.array_equal(couplings, couplings.T):
            raise ValueError("матрица связей должна быть симметричной")
        if np.any(np.diag(couplings) != 0.0):
            raise ValueError("диагональ матрицы связей должна быть нулевой")
        object.__setattr__(self, "couplings", couplings)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Траектории P(t), q(t), r(t) квадратичной функции стоимости."""

    grid: TimeGrid
    P: np.ndarray
    q: np.ndarray
    r: np.ndarray

    @property
    def cost(self) -> float:
        return float(self.r[0])

    @property
    def per_agent_cost(self) -> float:
        return self.cost / self.P.shape[-1]


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    bias_corrected: Optional[float] = None
