from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

SCHEMA_VERSION = 1

# ν(x) = x²/2 + x⁴/4!, φ(x) = ½(x−1)²
DEFAULT_NU: tuple[float, ...] = (0.0, 0.0, 0.5, 0.0, 1.0 / 24.0)
DEFAULT_PHI: tuple[float, ...] = (0.5, -1.0, 0.5)


def parse_coeffs(v):
    """Принимает коэффициенты полинома списком или строкой вида "0, 0, 0.5"."""
    if isinstance(v, str):
        parts = [p.strip() for p in v.replace(";", ",").split(",")]
        return tuple(float(p) for p in parts if p)
    return v


def leading_term(coeffs: Sequence[float]) -> tuple[int, float]:
    """Степень и коэффициент старшего ненулевого члена (-1, 0.0 для нулевого полинома)."""
    for power in range(len(coeffs) - 1, -1, -1):
        if coeffs[power] != 0.0:
            return power, float(coeffs[power])
    return -1, 0.0


def check_confining(coeffs: Sequence[float]) -> tuple[float, ...]:
    """Проверяет, что ν удерживает частицу: чётная старшая степень ≥ 2 с положительным коэффициентом.

    Нулевой полином (свободная частица) допускается как вырожденный случай.
    """
    coeffs = tuple(float(c) for c in coeffs)
    if not all(np.isfinite(coeffs)):
        raise ValueError("коэффициенты должны быть конечными")
    power, coef = leading_term(coeffs)
    if power == -1:
        return coeffs
    if power < 2 or power % 2 != 0 or coef <= 0.0:
        raise ValueError(
            f"старший член ν должен иметь чётную степень ≥ 2 и положительный коэффициент "
            f"(получено x^{power} с коэффициентом {coef})"
        )
    return coeffs


def check_bounded_below(coeffs: Sequence[float]) -> tuple[float, ...]:
    """Терминальная стоимость φ: константа или чётная старшая степень с положительным коэффициентом."""
    coeffs = tuple(float(c) for c in coeffs)
    if not all(np.isfinite(coeffs)):
        raise ValueError("коэффициенты должны быть конечными")
    power, coef = leading_term(coeffs)
    if power <= 0:
        return coeffs
    if power % 2 != 0 or coef <= 0.0:
        raise ValueError(
            f"φ должна быть ограничена снизу (получен старший член x^{power} с коэффициентом {coef})"
        )
    return coeffs


def check_odd(n_x: int) -> int:
    if n_x % 2 == 0:
        raise ValueError(f"n_x должно быть нечётным, чтобы x = 0 было узлом сетки (получено {n_x})")
    return n_x


class ModelParams(BaseModel):
    """Физическая постановка задачи: J, ν, φ, t_f."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    J: float = Field(..., ge=0.0, description="Сила случайной связи")
    nu_coeffs: tuple[float, ...] = Field(DEFAULT_NU, description="Коэффициенты ν(x) по возрастанию степени")
    phi_coeffs: tuple[float, ...] = Field(DEFAULT_PHI, description="Коэффициенты φ(x) по возрастанию степени")
    t_f: float = Field(1.0, gt=0.0, description="Горизонт управления")

    @field_validator("nu_coeffs", "phi_coeffs", mode="before")
    @classmethod
    def split_coeffs(cls, v):
        return parse_coeffs(v)

    @field_validator("nu_coeffs")
    @classmethod
    def validate_nu(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        return check_confining(v)

    @field_validator("phi_coeffs")
    @classmethod
    def validate_phi(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        return check_bounded_below(v)

    def is_quadratic(self) -> bool:
        """True, если ν и φ — полиномы степени не выше 2 (класс, решаемый Риккати)."""
        return leading_term(self.nu_coeffs)[0] <= 2 and leading_term(self.phi_coeffs)[0] <= 2

    def quadratic_part(self, which: Literal["nu", "phi"]) -> tuple[float, float, float]:
        """(c0, c1, c2) для полинома степени ≤ 2."""
        coeffs = self.nu_coeffs if which == "nu" else self.phi_coeffs
        if leading_term(coeffs)[0] > 2:
            raise ValueError(f"{which} не является квадратичным полиномом")
        padded = tuple(coeffs) + (0.0, 0.0, 0.0)
        return padded[0], padded[1], padded[2]


class TimeGrid(BaseModel):
    """Равномерная сетка τ_i = i·t_f/M, i = 0..M."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    t_f: float = Field(..., gt=0.0)
    M: int = Field(64, ge=2)

    @property
    def dt(self) -> float:
        return self.t_f / self.M

    @property
    def size(self) -> int:
        return self.M + 1

    @property
    def nodes(self) -> np.ndarray:
        nodes = np.arange(self.M + 1) * self.dt
        nodes[-1] = self.t_f
        return nodes


class SpaceGrid(BaseModel):
    """Равномерная сетка на [−L, L] с нечётным числом узлов."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    L: float = Field(6.0, gt=0.0)
    n_x: int = Field(241, ge=3)

    @field_validator("n_x")
    @classmethod
    def validate_n_x(cls, v: int) -> int:
        return check_odd(v)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.n_x - 1)

    @property
    def center(self) -> int:
        return (self.n_x - 1) // 2

    @property
    def nodes(self) -> np.ndarray:
        nodes = -self.L + np.arange(self.n_x) * self.dx
        nodes[self.center] = 0.0
        nodes[-1] = self.L
        return nodes

    def nearest(self, x: float) -> int:
        return int(np.clip(round((x + self.L) / self.dx), 0, self.n_x - 1))


class SolverConfig(BaseModel):
    """Параметры цикла самосогласования."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_H: int = Field(16, ge=2)
    n_h: int = Field(16, ge=1)
    n_paths: int = Field(2000, ge=500)
    damping: float = Field(0.5, gt=0.0, le=1.0)
    tol: float = Field(1e-3, gt=0.0)
    window: int = Field(5, ge=1)
    max_iter: int = Field(50, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    fp_substeps: int = Field(4, ge=1)
    u_max: float = Field(50.0, gt=0.0)
    jitter: float = Field(1e-10, gt=0.0)
    floor: float = Field(1e-12, gt=0.0)
    refine_n_H: int = Field(0, ge=0)


class OracleConfig(BaseModel):
    """Параметры конечномерного оракула."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(64, ge=1)
    n_instances: int = Field(8, ge=4)
    mode: Literal["riccati", "feynman-kac"] = "riccati"
    n_paths: int = Field(10_000, ge=1000)
    seed: int = Field(1234, ge=0)
    finite_size_c: float = Field(2.0, ge=0.0)


class ResidualRow(BaseModel):
    iteration: int
    delta_D: float
    delta_F: float
    ess_mean: float
    ess_min: float
    low_ess_fraction: float
    clipped_mass: float
    r0: float
    r0_stderr: float


class RSSummary(BaseModel):
    """Итог решения RS-уравнений (summary.json)."""

    schema_version: int = SCHEMA_VERSION
    kind: Literal["rs"] = "rs"
    r0: float
    r0_stderr: float
    kernel_term: float
    log_norm_term: float
    converged: bool
    iterations: int
    low_ess_fraction: float
    model: ModelParams
    grid: dict
    solver: SolverConfig


class InstanceCost(BaseModel):
    """Стоимость на агента для одной реализации; bias_corrected — оценка складного ножа."""

    index: int
    cost: float
    stderr: float = 0.0
    bias_corrected: float


class OracleSummary(BaseModel):
    """Итог конечномерного оракула (oracle.json)."""

    schema_version: int = SCHEMA_VERSION
    kind: Literal["oracle"] = "oracle"
    r0: float
    r0_stderr: float
    r0_bias_corrected: Optional[float] = None
    N: int
    mode: str
    refused: int
    instances: list[InstanceCost] = Field(default_factory=list)
    model: ModelParams
    oracle: OracleConfig


class CompareReport(BaseModel):
    """Сравнение RS-решения и оракула (compare.json)."""

    schema_version: int = SCHEMA_VERSION
    kind: Literal["compare"] = "compare"
    r0_rs: float
    r0_oracle: float
    difference: float
    tolerance: float
    finite_size_allowance: float
    passed: bool


class SingleAgentSummary(BaseModel):
    """Решение одночастичной задачи без полей (single_agent.json)."""

    schema_version: int = SCHEMA_VERSION
    kind: Literal["single-agent"] = "single-agent"
    cost: float
    psi_00: float
    masked_nodes: int
    model: ModelParams
    grid: dict


class ErrorResponse(BaseModel):
    error: str
    detail: str
    command: Optional[str] = None
