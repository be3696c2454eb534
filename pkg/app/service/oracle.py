"""Конечномерный оракул: случайные связи, точное решение Риккати и оценка Фейнмана–Каца."""

from dataclasses import dataclass, field
from typing import List, Literal

import numpy as np
from scipy import linalg

from app.logger.logger import logger
from app.metrics import metrics
from app.models.arrays import DisorderInstance, MonteCarloEstimate, RiccatiSolution
from app.models.models import InstanceCost, ModelParams, TimeGrid
from app.service.errors import IndefiniteCouplingError, RefusalRateError, WeightCollapseError
from app.service.potentials import eval_nu, eval_phi

MIN_FK_PATHS = 1000
MIN_INSTANCES = 4
MAX_REFUSAL_RATE = 0.2


@dataclass
class QuenchedEstimate:
    """Среднее по беспорядку стоимости на агента и его стандартная ошибка."""

    value: float
    stderr: float
    instances: List[InstanceCost] = field(default_factory=list)
    refused: int = 0

    @property
    def bias_corrected(self) -> float:
        """Среднее по реализациям поправленных на смещение стоимостей."""
        return float(np.mean([inst.bias_corrected for inst in self.instances]))


def sample_disorder(N: int, J: float, rng: np.random.Generator) -> DisorderInstance:
    """J_ij = J/√N · z_ij для i < j, отражение на j > i, нулевая диагональ."""
    if N < 1:
        raise ValueError("N должно быть не меньше 1")
    if J < 0.0:
        raise ValueError("J должно быть неотрицательным")
    upper = np.triu(rng.standard_normal((N, N)), k=1) * (J / np.sqrt(N))
    return DisorderInstance(N=N, couplings=upper + upper.T)


def coupling_matrix(instance: DisorderInstance, params: ModelParams) -> np.ndarray:
    """A = 2ν₂·I + J_ij: гессиан потенциала Σν(x_i) + Σ_{i<j} J_ij x_i x_j."""
    _, _, nu2 = params.quadratic_part("nu")
    return 2.0 * nu2 * np.eye(instance.N) + instance.couplings


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def solve_riccati_system(
    A: np.ndarray,
    b: np.ndarray,
    const: float,
    P_T: np.ndarray,
    q_T: np.ndarray,
    r_T: float,
    tg: TimeGrid,
) -> RiccatiSolution:
    """Интегрирует назад по времени RK4 систему для f = ½xᵀPx + qᵀx + r.

    −Ṗ = A − P², −q̇ = b − Pq, −ṙ = const + ½Tr P − ½|q|².
    Каждая стадия симметризуется.
    """
    A = _sym(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)

    def rhs(P, q):
        dP = _sym(A - P @ P)
        dq = b - P @ q
        dr = const + 0.5 * np.trace(P) - 0.5 * float(q @ q)
        return dP, dq, dr

    n = A.shape[0]
    P = np.empty((tg.size, n, n))
    q = np.empty((tg.size, n))
    r = np.empty(tg.size)
    P[-1], q[-1], r[-1] = _sym(np.asarray(P_T, dtype=float)), q_T, r_T
    h = tg.dt
    for i in range(tg.M, 0, -1):
        P0, q0, r0 = P[i], q[i], r[i]
        k1 = rhs(P0, q0)
        k2 = rhs(_sym(P0 + 0.5 * h * k1[0]), q0 + 0.5 * h * k1[1])
        k3 = rhs(_sym(P0 + 0.5 * h * k2[0]), q0 + 0.5 * h * k2[1])
        k4 = rhs(_sym(P0 + h * k3[0]), q0 + h * k3[1])
        P[i - 1] = _sym(P0 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]))
        q[i - 1] = q0 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        r[i - 1] = r0 + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return RiccatiSolution(grid=tg, P=P, q=q, r=r)


def riccati_solve(instance: DisorderInstance, params: ModelParams, tg: TimeGrid) -> RiccatiSolution:
    """Точная стоимость f(0⃗, 0) = r(0) для квадратичных ν и φ.

    Raises:
        ValueError: ν или φ не квадратичны
        IndefiniteCouplingError: A не положительно определена
    """
    if not params.is_quadratic():
        raise ValueError("решение Риккати требует квадратичных ν и φ")
    A = coupling_matrix(instance, params)
    try:
        linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as e:
        raise IndefiniteCouplingError(
            f"A = 2ν₂·I + J не положительно определена (N={instance.N}); уменьшите J"
        ) from e

    N = instance.N
    nu0, nu1, _ = params.quadratic_part("nu")
    phi0, phi1, phi2 = params.quadratic_part("phi")
    solution = solve_riccati_system(
        A,
        b=np.full(N, nu1),
        const=N * nu0,
        P_T=2.0 * phi2 * np.eye(N),
        q_T=np.full(N, phi1),
        r_T=N * phi0,
        tg=tg,
    )
    logger.debug(f"[ORACLE] Риккати: N={N}, r(0)/N = {solution.per_agent_cost:.8f}")
    return solution


def _path_potential(instance: DisorderInstance, params: ModelParams, x: np.ndarray) -> np.ndarray:
    local = np.asarray(eval_nu(params, x), dtype=float).sum(axis=1)
    pair = 0.5 * np.einsum("pi,ij,pj->p", x, instance.couplings, x)
    return local + pair


def fk_nbody_estimate(
    instance: DisorderInstance,
    params: ModelParams,
    n_paths: int,
    rng: np.random.Generator,
    tg: TimeGrid,
) -> MonteCarloEstimate:
    """−(1/N)·ln ψ(0⃗, 0) по свободным N-мерным броуновским траекториям.

    Вес траектории exp(−∫V dt − Σφ(x_i(t_f))), интеграл по трапециям.
    Ошибка логарифма среднего и поправка смещения считаются методом складного ножа.

    Raises:
        WeightCollapseError: Все веса обнулились
    """
    if n_paths < MIN_FK_PATHS:
        raise ValueError(f"n_paths должно быть не меньше {MIN_FK_PATHS}")
    N = instance.N
    sqrt_dt = np.sqrt(tg.dt)
    x = np.zeros((n_paths, N))
    v_prev = _path_potential(instance, params, x)
    action = np.zeros(n_paths)
    for _ in range(tg.M):
        x = x + sqrt_dt * rng.standard_normal((n_paths, N))
        v_next = _path_potential(instance, params, x)
        action += 0.5 * tg.dt * (v_prev + v_next)
        v_prev = v_next
    log_w = -action - np.asarray(eval_phi(params, x), dtype=float).sum(axis=1)
    metrics.particle_paths.inc(n_paths)

    if not np.any(np.isfinite(log_w)):
        raise WeightCollapseError(
            f"все веса Фейнмана–Каца обнулились (N={N}, t_f={tg.t_f}); уменьшите t_f или N"
        )
    shift = float(np.max(log_w))
    w = np.exp(log_w - shift)
    total = float(np.sum(w))
    estimate = -(shift + np.log(total / n_paths)) / N

    leave_one_out = np.maximum(total - w, np.finfo(float).tiny) / (n_paths - 1)
    jack = -(shift + np.log(leave_one_out)) / N
    jack_mean = float(np.mean(jack))
    stderr = float(np.sqrt((n_paths - 1) / n_paths * np.sum((jack - jack_mean) ** 2)))
    corrected = n_paths * estimate - (n_paths - 1) * jack_mean
    logger.debug(f"[ORACLE] Фейнман–Кац: N={N}, {estimate:.6f} ± {stderr:.2e}")
    return MonteCarloEstimate(value=float(estimate), stderr=stderr, bias_corrected=float(corrected))


def quenched_average(
    params: ModelParams,
    N: int,
    n_instances: int,
    mode: Literal["riccati", "feynman-kac"],
    n_paths: int,
    rng: np.random.Generator,
    tg: TimeGrid,
) -> QuenchedEstimate:
    """Среднее по независимым реализациям связей стоимости на агента.

    Отвергнутые (неудерживающие) реализации перевыбираются; если их больше
    20% от n_instances, расчёт прерывается.

    Raises:
        RefusalRateError: Слишком много отвергнутых реализаций
    """
    if n_instances < MIN_INSTANCES:
        raise ValueError(f"n_instances должно быть не меньше {MIN_INSTANCES}")
    if mode == "riccati" and not params.is_quadratic():
        raise ValueError("режим riccati требует квадратичных ν и φ")

    max_refused = int(MAX_REFUSAL_RATE * n_instances)
    instances: List[InstanceCost] = []
    refused = 0
    while len(instances) < n_instances:
        child = rng.spawn(1)[0]
        instance = sample_disorder(N, params.J, child)
        if mode == "riccati":
            try:
                solution = riccati_solve(instance, params, tg)
            except IndefiniteCouplingError:
                refused += 1
                logger.warning(f"[ORACLE] Реализация отвергнута: A не положительно определена ({refused})")
                if refused > max_refused:
                    raise RefusalRateError(
                        f"отвергнуто {refused} реализаций при n_instances={n_instances}; уменьшите J"
                    )
                continue
            cost, stderr = solution.per_agent_cost, 0.0
            corrected = cost
        else:
            mc = fk_nbody_estimate(instance, params, n_paths, child, tg)
            cost, stderr, corrected = mc.value, mc.stderr, mc.bias_corrected
        instances.append(
            InstanceCost(index=len(instances), cost=cost, stderr=stderr, bias_corrected=corrected)
        )
        metrics.oracle_instances.inc()
        logger.info(f"[ORACLE] Реализация {len(instances)}/{n_instances}: стоимость на агента {cost:.8f}")

    costs = np.array([inst.cost for inst in instances])
    value = float(np.mean(costs))
    disorder_se = float(np.std(costs, ddof=1) / np.sqrt(costs.size))
    logger.info(
        f"[ORACLE] N={N}, {mode}: r₀ = {value:.8f} ± {disorder_se:.2e}, отвергнуто {refused}"
    )
    return QuenchedEstimate(value=value, stderr=disorder_se, instances=instances, refused=refused)
