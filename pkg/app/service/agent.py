"""Эффективный агент: наблюдаемые m(τ), C(τ,τ′) при заданных полях и их взвешенное усреднение по h."""

from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from app.cache.cache import cache
from app.logger.logger import logger
from app.metrics import metrics
from app.models.arrays import FieldPath, HPopulationResult, HSampleResult, SinglePipeline
from app.models.models import ModelParams, SpaceGrid, TimeGrid
from app.service.errors import WeightCollapseError
from app.service.pde import (
    SchemeConfig,
    cole_hopf,
    density_moment,
    drift_from_value,
    mass_error,
    solve_fp_forward,
    solve_psi_backward,
)

MIN_PATHS = 500
MEAN_GAP_SIGMAS = 3.0


def single_agent_pipeline(
    params: ModelParams,
    g: FieldPath,
    sg: SpaceGrid,
    tg: TimeGrid,
    floor: float = SchemeConfig.FLOOR_REL,
    u_max: float = SchemeConfig.U_MAX,
    substeps: int = 4,
) -> SinglePipeline:
    """ψ → c → u → π и m(τ) для одного поля g; результат кэшируется по байтам g."""
    key = (params, sg, tg, floor, u_max, substeps, g.values.tobytes())

    def compute() -> SinglePipeline:
        psi = solve_psi_backward(params, g, sg, tg, floor)
        cost = cole_hopf(psi, floor_rel=floor)
        drift = drift_from_value(cost, u_max)
        density = solve_fp_forward(drift, sg.center, 0, sg, tg, substeps)
        m = np.array([density_moment(density, i, 1) for i in range(tg.size)])
        return SinglePipeline(psi, cost, drift, density, m, mass_error(density))

    return cache.get_or_compute(key, compute)


def simulate_controlled_paths(
    pipeline: SinglePipeline, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """Траектории Эйлера–Маруямы dx = u(x, τ_i)dt + dW из x(0) = 0, массив (n_paths, M+1).

    Дрейф интерполируется линейно по x и берётся в левом узле шага по времени.
    """
    drift = pipeline.drift
    sg, tg = drift.function.space, drift.function.time
    nodes = sg.nodes
    sqrt_dt = np.sqrt(tg.dt)
    paths = np.zeros((n_paths, tg.size))
    for i in range(tg.M):
        x = paths[:, i]
        u = np.interp(x, nodes, drift.values[i])
        paths[:, i + 1] = x + u * tg.dt + sqrt_dt * rng.standard_normal(n_paths)
    metrics.particle_paths.inc(n_paths)
    return paths


def agent_observables(
    params: ModelParams,
    h: FieldPath,
    H: FieldPath,
    sg: SpaceGrid,
    tg: TimeGrid,
    n_paths: int,
    rng: np.random.Generator,
    floor: float = SchemeConfig.FLOOR_REL,
    u_max: float = SchemeConfig.U_MAX,
    substeps: int = 4,
) -> HSampleResult:
    """Вес ψ(0,0), m(τ) по плотности Фоккера–Планка и C(τ,τ′) по ансамблю частиц.

    Args:
        params: Параметры модели
        h: Внутреннее поле
        H: Внешнее поле
        sg: Пространственная сетка
        tg: Временная сетка
        n_paths: Число траекторий для C (не меньше 500)
        rng: Собственный генератор случайных чисел

    Returns:
        HSampleResult

    Raises:
        WeightCollapseError: ψ(0,0) ниже порога
    """
    if n_paths < MIN_PATHS:
        raise ValueError(f"n_paths должно быть не меньше {MIN_PATHS}")
    if h.grid != tg or H.grid != tg:
        raise ValueError("поля h и H должны быть заданы на временной сетке решения")

    g = FieldPath(tg, params.J * (h.values + H.values))
    pipeline = single_agent_pipeline(params, g, sg, tg, floor, u_max, substeps)
    log_weight = -float(pipeline.cost.values[0, sg.center])

    paths = simulate_controlled_paths(pipeline, n_paths, rng)
    C = paths.T @ paths / n_paths
    C = 0.5 * (C + C.T)
    C_stderr = np.std(paths**2, axis=0, ddof=1) / np.sqrt(n_paths)

    mean = paths.mean(axis=0)
    sem = paths.std(axis=0, ddof=1) / np.sqrt(n_paths)
    live = sem > 0.0
    gap = float(np.max(np.abs(mean[live] - pipeline.m[live]) / sem[live], initial=0.0))
    if gap > MEAN_GAP_SIGMAS:
        logger.warning(f"[AGENT] Среднее частиц расходится с m(τ) по Фоккеру–Планку на {gap:.1f}σ")

    return HSampleResult(
        weight=float(np.exp(log_weight)),
        log_weight=log_weight,
        m=pipeline.m,
        C=C,
        masked_nodes=pipeline.cost.masked_count,
        mass_error=pipeline.mass_error,
        mean_gap_sigmas=gap,
        C_stderr=C_stderr,
    )


def population_average(samples: Sequence[HSampleResult]) -> HPopulationResult:
    """⟦O⟧ = Σ w_k O_k / Σ w_k для O ∈ {m, C}, N_h = (1/n)Σ w_k, ESS = (Σw)²/Σw².

    Raises:
        WeightCollapseError: Все веса нулевые
    """
    if not samples:
        raise ValueError("нужна хотя бы одна выборка h")
    log_w = np.array([s.log_weight for s in samples])
    if not np.any(np.isfinite(log_w)):
        raise WeightCollapseError("все веса популяции h равны нулю")
    w = np.exp(log_w - np.max(log_w))
    total = float(np.sum(w))
    normalized = w / total

    m = np.tensordot(normalized, np.stack([s.m for s in samples]), axes=1)
    C = np.tensordot(normalized, np.stack([s.C for s in samples]), axes=1)
    C = 0.5 * (C + C.T)
    log_N_h = float(logsumexp(log_w) - np.log(len(samples)))
    ess = total**2 / float(np.sum(w**2))
    return HPopulationResult(
        m=m, C=C, N_h=float(np.exp(log_N_h)), log_N_h=log_N_h, ess=ess, size=len(samples)
    )
