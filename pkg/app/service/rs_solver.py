"""Цикл самосогласования ядер D, F и стоимость r₀ в репличносимметричном приближении."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.integrate import trapezoid

from app.logger.logger import logger
from app.metrics import metrics
from app.models.arrays import CovarianceFactor, FieldPath, HPopulationResult, RSState, TwoTimeKernel
from app.models.models import ModelParams, SolverConfig, SpaceGrid, TimeGrid
from app.service.agent import agent_observables, population_average
from app.service.errors import GridMismatchError
from app.service.fields import kernel_difference, psd_project, sample_field

CLIPPED_MASS_WARN = 0.1
LOW_ESS_FRACTION = 0.1

RandomSource = Union[np.random.SeedSequence, np.random.Generator, int]


@dataclass(frozen=True)
class IterationEstimate:
    """Результат одного прохода по полям: оценки ядер и выборка ln N_h."""

    D: TwoTimeKernel
    F: TwoTimeKernel
    log_N_h: np.ndarray
    ess: np.ndarray
    n_h: int
    clipped_mass: float
    m_profile: np.ndarray

    @property
    def low_ess_fraction(self) -> float:
        return float(np.mean(self.ess < LOW_ESS_FRACTION * self.n_h))


@dataclass(frozen=True)
class R0Estimate:
    r0: float
    stderr: float
    kernel_term: float
    log_norm_term: float


def _seed_sequence(source: RandomSource) -> np.random.SeedSequence:
    if isinstance(source, np.random.SeedSequence):
        return source
    if isinstance(source, np.random.Generator):
        return np.random.SeedSequence(int(source.integers(2**63)))
    return np.random.SeedSequence(int(source))


def _scheme(cfg: SolverConfig) -> dict:
    return {"floor": cfg.floor, "u_max": cfg.u_max, "substeps": cfg.fp_substeps}


def initialize_kernels(
    params: ModelParams,
    sg: SpaceGrid,
    tg: TimeGrid,
    n_paths: int,
    rng: np.random.Generator,
    **scheme,
) -> tuple[TwoTimeKernel, TwoTimeKernel]:
    """Начальное приближение из задачи без полей: D⁰ = C⁰, F⁰ = m⁰·m⁰ᵀ."""
    zero = FieldPath.zeros(tg)
    sample = agent_observables(params, zero, zero, sg, tg, n_paths, rng, **scheme)
    D0 = TwoTimeKernel(tg, sample.C)
    F0 = TwoTimeKernel(tg, np.outer(sample.m, sample.m))
    logger.info(f"[RS] Начальные ядра: D⁰(t_f,t_f) = {sample.C[-1, -1]:.6f}, m⁰(t_f) = {sample.m[-1]:.6f}")
    return D0, F0


def _outer_sample(
    params: ModelParams,
    cfg: SolverConfig,
    sg: SpaceGrid,
    tg: TimeGrid,
    outer_factor: CovarianceFactor,
    inner_factor: CovarianceFactor,
    seed: np.random.SeedSequence,
) -> HPopulationResult:
    children = seed.spawn(cfg.n_h + 1)
    H = sample_field(outer_factor, np.random.default_rng(children[0]))
    samples = []
    for child in children[1:]:
        rng = np.random.default_rng(child)
        h = sample_field(inner_factor, rng)
        samples.append(
            agent_observables(params, h, H, sg, tg, cfg.n_paths, rng, **_scheme(cfg))
        )
    return population_average(samples)


def rs_iteration(
    state: RSState,
    params: ModelParams,
    cfg: SolverConfig,
    sg: SpaceGrid,
    tg: TimeGrid,
    rng: RandomSource,
) -> IterationEstimate:
    """Один проход: n_H полей H ~ F, для каждого n_h полей h ~ D − F.

    D_est = ⟨⟦C⟧⟩_H, F_est = ⟨⟦m⟧⟦m⟧ᵀ⟩_H. Внешние выборки независимы и
    считаются в пуле потоков; порядок свёртки не зависит от числа потоков.
    """
    outer_factor = psd_project(state.F, cfg.jitter)
    inner_factor = psd_project(kernel_difference(state.D, state.F), cfg.jitter)
    clipped = max(outer_factor.clipped_mass, inner_factor.clipped_mass)
    if clipped > CLIPPED_MASS_WARN:
        logger.warning(f"[RS] Ремонт ядра отбросил {clipped:.1%} спектральной массы")

    seeds = _seed_sequence(rng).spawn(cfg.n_H)

    def task(seed: np.random.SeedSequence) -> HPopulationResult:
        return _outer_sample(params, cfg, sg, tg, outer_factor, inner_factor, seed)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            populations = list(pool.map(task, seeds))
    else:
        populations = [task(seed) for seed in seeds]

    D_est = np.mean([pop.C for pop in populations], axis=0)
    F_est = np.mean([np.outer(pop.m, pop.m) for pop in populations], axis=0)
    return IterationEstimate(
        D=TwoTimeKernel(tg, 0.5 * (D_est + D_est.T)),
        F=TwoTimeKernel(tg, 0.5 * (F_est + F_est.T)),
        log_N_h=np.array([pop.log_N_h for pop in populations]),
        ess=np.array([pop.ess for pop in populations]),
        n_h=cfg.n_h,
        clipped_mass=clipped,
        m_profile=np.mean([pop.m for pop in populations], axis=0),
    )


def damped_update(old: TwoTimeKernel, est: TwoTimeKernel, alpha: float) -> TwoTimeKernel:
    """(1 − α)·old + α·est с точной симметризацией."""
    if old.grid != est.grid:
        raise GridMismatchError("damped_update: ядра на разных сетках")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"α должно лежать в [0, 1], получено {alpha}")
    mixed = (1.0 - alpha) * old.values + alpha * est.values
    return TwoTimeKernel(old.grid, 0.5 * (mixed + mixed.T))


def check_convergence(history: Sequence[float], tol: float, window: int) -> bool:
    """Среднее невязок за последние window итераций меньше tol."""
    if window < 1 or len(history) < window:
        return False
    return bool(np.mean(history[-window:]) < tol)


def evaluate_r0(
    D: TwoTimeKernel,
    F: TwoTimeKernel,
    log_N_h: Sequence[float],
    tg: TimeGrid,
    J: float,
) -> R0Estimate:
    """r₀ = (J²/4)∬[D² − F²] − ⟨ln N_h⟩_H с ошибкой по разбросу ln N_h."""
    log_N_h = np.asarray(log_N_h, dtype=float)
    if log_N_h.size < 2:
        raise ValueError("для оценки r₀ нужно не меньше двух значений ln N_h")
    tau = tg.nodes
    integrand = D.values**2 - F.values**2
    kernel_term = 0.25 * J**2 * float(trapezoid(trapezoid(integrand, tau, axis=1), tau))
    log_norm_term = -float(np.mean(log_N_h))
    stderr = float(np.std(log_N_h, ddof=1) / np.sqrt(log_N_h.size))
    return R0Estimate(kernel_term + log_norm_term, stderr, kernel_term, log_norm_term)


def solve_rs(params: ModelParams, cfg: SolverConfig, sg: SpaceGrid, tg: TimeGrid) -> RSState:
    """Итерирует D, F до сходимости (или max_iter) и вычисляет r₀.

    Зерно каждой итерации выводится из cfg.seed детерминированно; при J = 0
    поля не входят в задачу агента и цикл останавливается после первой итерации.
    """
    logger.info(
        f"[RS] Старт: J={params.J}, t_f={params.t_f}, M={tg.M}, n_x={sg.n_x}, "
        f"n_H={cfg.n_H}, n_h={cfg.n_h}, n_paths={cfg.n_paths}, α={cfg.damping}"
    )
    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    D, F = initialize_kernels(params, sg, tg, cfg.n_paths, init_rng, **_scheme(cfg))
    state = RSState(D=D, F=F)

    for iteration in range(1, cfg.max_iter + 1):
        seed = np.random.SeedSequence(cfg.seed, spawn_key=(iteration,))
        estimate = rs_iteration(state, params, cfg, sg, tg, seed)
        D_new = damped_update(state.D, estimate.D, cfg.damping)
        F_new = damped_update(state.F, estimate.F, cfg.damping)
        delta_D = float(np.max(np.abs(D_new.values - state.D.values)))
        delta_F = float(np.max(np.abs(F_new.values - state.F.values)))
        running = evaluate_r0(D_new, F_new, estimate.log_N_h, tg, params.J)

        state.D, state.F = D_new, F_new
        state.iteration = iteration
        state.delta_D.append(delta_D)
        state.delta_F.append(delta_F)
        state.ess_mean.append(float(np.mean(estimate.ess)))
        state.ess_min.append(float(np.min(estimate.ess)))
        state.low_ess_fraction.append(estimate.low_ess_fraction)
        state.clipped_mass.append(estimate.clipped_mass)
        state.r0_trace.append(running.r0)
        state.r0_stderr_trace.append(running.stderr)
        state.log_N_h = estimate.log_N_h
        state.m_profile = estimate.m_profile

        metrics.rs_iterations.inc()
        metrics.last_residual.set(max(delta_D, delta_F))
        metrics.last_ess_min.set(state.ess_min[-1])
        logger.info(
            f"[RS] Итерация {iteration}: ΔD={delta_D:.3e}, ΔF={delta_F:.3e}, "
            f"ESS min={state.ess_min[-1]:.1f}, r₀={running.r0:.6f} ± {running.stderr:.2e}"
        )
        if estimate.low_ess_fraction > 0.0:
            logger.warning(
                f"[RS] ESS < {LOW_ESS_FRACTION:.0%}·n_h у {estimate.low_ess_fraction:.0%} внешних выборок"
            )

        if params.J == 0.0:
            logger.info("[RS] J = 0: поля отцеплены, начальные ядра — неподвижная точка")
            state.converged = True
            break
        if check_convergence(state.residuals, cfg.tol, cfg.window):
            state.converged = True
            break

    if not state.converged:
        logger.warning(f"[RS] Нет сходимости за {cfg.max_iter} итераций")

    log_N_h = state.log_N_h
    if cfg.refine_n_H > 0:
        refine_cfg = cfg.model_copy(update={"n_H": cfg.refine_n_H})
        seed = np.random.SeedSequence(cfg.seed, spawn_key=(cfg.max_iter + 1,))
        log_N_h = rs_iteration(state, params, refine_cfg, sg, tg, seed).log_N_h
        logger.info(f"[RS] Уточнение r₀ по {cfg.refine_n_H} внешним выборкам")

    final = evaluate_r0(state.D, state.F, log_N_h, tg, params.J)
    state.r0 = final.r0
    state.r0_stderr = final.stderr
    state.kernel_term = final.kernel_term
    state.log_norm_term = final.log_norm_term
    logger.info(
        f"[RS] r₀ = {final.r0:.8f} ± {final.stderr:.2e} "
        f"(ядро {final.kernel_term:.6f}, −⟨ln N_h⟩ {final.log_norm_term:.6f}), сходимость: {state.converged}"
    )
    return state
