"""Одномерные решатели: обратное уравнение для ψ, преобразование Коула–Хопфа,
оптимальный дрейф, прямое уравнение Фоккера–Планка и проверка Фейнмана–Каца."""

import csv
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg, special
from scipy.integrate import trapezoid

from app.logger.logger import logger
from app.metrics import metrics
from app.models.arrays import DriftField, FieldPath, GridFunction, MonteCarloEstimate
from app.models.models import ModelParams, SpaceGrid, TimeGrid
from app.service.errors import MassConservationError, PsiPositivityError, WeightCollapseError
from app.service.potentials import eval_nu, eval_phi, terminal_weight


class SchemeConfig:
    """Константы дискретизации по умолчанию."""

    FLOOR_REL = 1e-12
    UNDERSHOOT_REL = 1e-6
    U_MAX = 50.0
    MASS_ABORT = 1e-6
    MASS_TOL = 1e-8
    BOUNDARY_MASS_WARN = 1e-8
    RANNACHER_HALF_STEPS = 2


def _check_grids(g: FieldPath, tg: TimeGrid) -> None:
    if g.grid != tg:
        raise ValueError(f"поле задано на сетке M={g.grid.M}, ожидалась M={tg.M}")


def _tridiag(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Ленточная запись для scipy.linalg.solve_banded((1, 1), ...)."""
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return ab


def _split_step(
    current: np.ndarray, rate: np.ndarray, dt: float, dx2: float, implicit_start: bool
) -> np.ndarray:
    """Шаг Стрэнга: e^{−½dt·V}, диффузия ½∂²ₓ на dt, снова e^{−½dt·V}.

    Множитель реакции точный и положительный. Диффузия по Кранку–Николсону,
    на первом шаге заменена неявными полушагами (старт Раннахера).
    Условие Дирихле: нули за пределами вектора внутренних узлов.
    """
    decay = np.exp(-0.5 * dt * rate)
    off = np.full(current.size - 1, 0.5 / dx2)
    v = decay * current
    if implicit_start:
        h = dt / SchemeConfig.RANNACHER_HALF_STEPS
        ab = _tridiag(-h * off, np.full(current.size, 1.0 + h / dx2), -h * off)
        for _ in range(SchemeConfig.RANNACHER_HALF_STEPS):
            v = linalg.solve_banded((1, 1), ab, v)
    else:
        h = 0.5 * dt
        rhs = (1.0 - h / dx2) * v
        rhs[:-1] += h * off * v[1:]
        rhs[1:] += h * off * v[:-1]
        ab = _tridiag(-h * off, np.full(current.size, 1.0 + h / dx2), -h * off)
        v = linalg.solve_banded((1, 1), ab, rhs)
    return decay * v


def _positive_step(
    current: np.ndarray, rate: np.ndarray, dt: float, dx2: float, implicit_start: bool
) -> np.ndarray:
    """_split_step; при заметном отрицательном выбросе шаг повторяется неявными полушагами."""
    stepped = _split_step(current, rate, dt, dx2, implicit_start)
    if implicit_start:
        return stepped
    top = float(np.max(stepped, initial=0.0))
    if float(np.min(stepped)) < -SchemeConfig.UNDERSHOOT_REL * top:
        logger.debug("[PDE] Выброс Кранка–Николсона, шаг повторён неявной схемой")
        stepped = _split_step(current, rate, dt, dx2, implicit_start=True)
    return stepped


def solve_psi_backward(
    params: ModelParams,
    g: FieldPath,
    sg: SpaceGrid,
    tg: TimeGrid,
    floor: float = SchemeConfig.FLOOR_REL,
) -> GridFunction:
    """Решает −∂ₜψ = [−ν(x) − g(t)·x + ½∂²ₓ]ψ назад от ψ(x, t_f) = e^{−φ(x)}.

    Расщепление Стрэнга: точный множитель e^{−½dt(ν + g·x)} вокруг шага
    Кранка–Николсона для диффузии, первый шаг от t_f с двумя неявными
    полушагами. Условие Дирихле ψ = 0 при x = ±L, включая строку t_f.
    Поле g берётся в левом узле каждого шага.

    Шаг Кранка–Николсона с выбросом глубже UNDERSHOOT_REL·max ψ повторяется
    неявными полушагами. Оставшиеся мелкие отрицательные значения обнуляются
    (такие узлы затем маскирует cole_hopf).

    Args:
        params: Параметры модели
        g: g(τ_i) = J·(h(τ_i) + H(τ_i))
        sg: Пространственная сетка
        tg: Временная сетка
        floor: Относительный порог, ниже которого |ψ| считается нулём

    Returns:
        GridFunction со значениями ψ[i][k]

    Raises:
        PsiPositivityError: ψ < −max(floor, UNDERSHOOT_REL)·max ψ во внутреннем узле
    """
    _check_grids(g, tg)
    x = sg.nodes
    xi = x[1:-1]
    dx2 = sg.dx**2
    nu = np.asarray(eval_nu(params, xi), dtype=float)

    psi = np.zeros((tg.size, sg.n_x))
    psi[-1, 1:-1] = terminal_weight(params, sg)[1:-1]
    current = psi[-1, 1:-1].copy()
    tolerance = max(floor, SchemeConfig.UNDERSHOOT_REL)

    for i in range(tg.M - 1, -1, -1):
        rate = nu + g.values[i] * xi
        current = _positive_step(current, rate, tg.dt, dx2, implicit_start=i == tg.M - 1)

        top = float(np.max(current, initial=0.0))
        worst = float(np.min(current))
        if top <= 0.0 or worst < -tolerance * top:
            k = int(np.argmin(current)) + 1
            logger.error(
                f"[PDE] ψ = {worst:.3e} в x = {x[k]:.3f}, τ = {tg.nodes[i]:.4f} "
                f"(порог {tolerance * top:.3e}); увеличьте L или M"
            )
            raise PsiPositivityError(
                f"ψ неположительна во внутреннем узле x={x[k]:.3f}, τ={tg.nodes[i]:.4f}: {worst:.3e}"
            )
        if worst < 0.0:
            logger.debug(f"[PDE] Обнулены выбросы ψ < 0 на τ = {tg.nodes[i]:.4f}: min {worst:.3e}")
            current = np.where(current < 0.0, 0.0, current)
        psi[i, 1:-1] = current

    metrics.backward_solves.inc()
    logger.debug(f"[PDE] ψ(0,0) = {psi[0, sg.center]:.10g}")
    return GridFunction(sg, tg, psi)


def cole_hopf(
    psi: GridFunction,
    floor: Optional[float] = None,
    floor_rel: float = SchemeConfig.FLOOR_REL,
) -> GridFunction:
    """c = −ln ψ там, где ψ > floor; остальные узлы маскируются (значение NaN).

    Args:
        psi: Решение solve_psi_backward
        floor: Абсолютный порог; если не задан — floor_rel·max ψ
        floor_rel: Относительный порог

    Raises:
        WeightCollapseError: ψ(0,0) ≤ floor — вес выборки не определён
    """
    values = psi.values
    threshold = floor if floor is not None else floor_rel * float(np.max(values))
    mask = values > threshold
    if not mask[0, psi.space.center]:
        logger.error(f"[PDE] ψ(0,0) = {values[0, psi.space.center]:.3e} не превышает порог {threshold:.3e}")
        raise WeightCollapseError(f"ψ(0,0) ≤ floor ({threshold:.3e}): вес выборки не определён")
    cost = np.full(values.shape, np.nan)
    cost[mask] = -np.log(values[mask])
    masked = int(np.count_nonzero(~mask))
    if masked:
        logger.debug(f"[PDE] Замаскировано узлов: {masked}")
    return GridFunction(psi.space, psi.time, cost, mask)


def drift_from_value(c: GridFunction, u_max: float = SchemeConfig.U_MAX) -> DriftField:
    """u = −∂ₓc: центральные разности, односторонние у границ маски, |u| ≤ u_max.

    В замаскированных узлах дрейф равен −u_max·sign(x), то есть направлен внутрь области.
    """
    values = c.values
    mask = c.mask if c.mask is not None else np.ones(values.shape, dtype=bool)
    dx = c.space.dx

    left_ok = np.zeros_like(mask)
    left_ok[:, 1:] = mask[:, :-1]
    right_ok = np.zeros_like(mask)
    right_ok[:, :-1] = mask[:, 1:]
    central = mask & left_ok & right_ok
    forward = mask & right_ok & ~left_ok
    backward = mask & left_ok & ~right_ok

    grad = np.zeros_like(values)
    with np.errstate(invalid="ignore"):
        diff = (values[:, 1:] - values[:, :-1]) / dx
        cen = (values[:, 2:] - values[:, :-2]) / (2.0 * dx)
    grad[:, 1:-1] = np.where(central[:, 1:-1], cen, 0.0)
    grad[:, :-1] = np.where(forward[:, :-1], diff, grad[:, :-1])
    grad[:, 1:] = np.where(backward[:, 1:], diff, grad[:, 1:])

    u = -grad
    restoring = -u_max * np.sign(c.space.nodes)
    u = np.where(mask, u, restoring[np.newaxis, :])
    u = np.clip(u, -u_max, u_max)
    return DriftField(GridFunction(c.space, c.time, u), u_max)


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """B(z) = z / (eᶻ − 1)."""
    return 1.0 / special.exprel(z)


def solve_fp_forward(
    drift: DriftField,
    x0: int,
    t0: int,
    sg: SpaceGrid,
    tg: TimeGrid,
    substeps: int = 1,
) -> GridFunction:
    """Переносит плотность ∂ₜπ = ½∂²ₓπ − ∂ₓ(u·π) вперёд от π(x, τ_{t0}) = δ(x − x_{x0}).

    Схема Чанга–Купера (экспоненциальная подгонка потока) с неявным шагом
    Эйлера и нулевым потоком на границах: π ≥ 0 и масса сохраняется.
    На шаге [τ_i, τ_{i+1}] дрейф равен среднему значений в его концах.

    Raises:
        MassConservationError: Отклонение массы превысило 1e-6
    """
    if not 0 <= x0 < sg.n_x:
        raise ValueError(f"x0={x0} вне сетки")
    if not 0 <= t0 < tg.M:
        raise ValueError(f"t0={t0} должно быть меньше M={tg.M}")
    dx = sg.dx
    diffusion = 0.5
    pi = np.zeros((tg.size, sg.n_x))
    pi[t0, x0] = 1.0 / dx
    current = pi[t0].copy()
    max_error = 0.0
    warned = False

    for i in range(t0, tg.M):
        u = 0.5 * (drift.values[i] + drift.values[i + 1])
        u_face = 0.5 * (u[:-1] + u[1:])
        w = -u_face * dx / diffusion
        a = diffusion / dx * _bernoulli(-w)
        b = diffusion / dx * _bernoulli(w)
        h = tg.dt / substeps
        diag = np.ones(sg.n_x)
        diag[:-1] += h * b / dx
        diag[1:] += h * a / dx
        ab = _tridiag(-h * b / dx, diag, -h * a / dx)
        for _ in range(substeps):
            current = linalg.solve_banded((1, 1), ab, current)
            current = np.where(current < 0.0, 0.0, current)

        mass = float(np.sum(current) * dx)
        error = abs(mass - 1.0)
        max_error = max(max_error, error)
        if error > SchemeConfig.MASS_ABORT:
            logger.error(f"[PDE] Масса π = {mass:.12f} на шаге {i + 1}")
            raise MassConservationError(f"нарушение сохранения массы: |∫π − 1| = {error:.3e}")
        boundary = float((current[0] + current[-1]) * dx)
        if boundary > SchemeConfig.BOUNDARY_MASS_WARN and not warned:
            warned = True
            logger.warning(f"[PDE] Масса у границы {boundary:.3e} > 1e-8 на τ = {tg.nodes[i + 1]:.4f}")
        pi[i + 1] = current

    metrics.forward_solves.inc()
    if max_error > SchemeConfig.MASS_TOL:
        logger.warning(f"[PDE] Ошибка массы {max_error:.3e} выше 1e-8")
    return GridFunction(sg, tg, pi)


def mass_error(pi: GridFunction) -> float:
    """Максимальное по времени |Σπ·dx − 1| для строк с ненулевой массой."""
    masses = pi.values.sum(axis=1) * pi.space.dx
    live = masses > 0.0
    return float(np.max(np.abs(masses[live] - 1.0), initial=0.0))


def density_moment(pi: GridFunction, i: int, p: int) -> float:
    """∫ x^p π(x, τ_i) dx по формуле трапеций."""
    x = pi.space.nodes
    return float(trapezoid(x**p * pi.values[i], x))


def rho_from_pi(
    pi: GridFunction,
    psi: GridFunction,
    y: int,
    t_prime: int,
    floor_rel: float = SchemeConfig.FLOOR_REL,
) -> GridFunction:
    """ρ(x, t | y, t′) = π(x, t | y, t′)·ψ(y, t′)/ψ(x, t) на незамаскированных узлах.

    Узлы, где ψ ≤ floor, и строки t < t′ помечены в маске и содержат NaN.
    """
    threshold = floor_rel * float(np.max(psi.values))
    mask = psi.values > threshold
    mask[:t_prime] = False
    rho = np.full(pi.values.shape, np.nan)
    anchor = psi.values[t_prime, y]
    rho[mask] = pi.values[mask] * anchor / psi.values[mask]
    return GridFunction(pi.space, pi.time, rho, mask)


def solve_rho_forward(
    params: ModelParams,
    g: FieldPath,
    y: int,
    t_prime: int,
    sg: SpaceGrid,
    tg: TimeGrid,
    substeps: int = 1,
) -> GridFunction:
    """Прямое решение ∂ₜρ = [−ν(x) − g(t)·x + ½∂²ₓ]ρ от ρ(x, t′) = δ(x − y).

    Та же схема, что у solve_psi_backward (расщепление Стрэнга с Кранком–Николсоном),
    но вперёд по времени; весь первый шаг после δ-начала сделан неявными полушагами.
    Условие Дирихле ρ = 0 при x = ±L. Независимый оракул для rho_from_pi.
    """
    _check_grids(g, tg)
    if not 0 <= y < sg.n_x:
        raise ValueError(f"y={y} вне сетки")
    if not 0 <= t_prime < tg.M:
        raise ValueError(f"t′={t_prime} должно быть меньше M={tg.M}")
    xi = sg.nodes[1:-1]
    dx2 = sg.dx**2
    nu = np.asarray(eval_nu(params, xi), dtype=float)
    rho = np.zeros((tg.size, sg.n_x))
    rho[t_prime, y] = 1.0 / sg.dx
    current = rho[t_prime, 1:-1].copy()
    h = tg.dt / substeps
    for i in range(t_prime, tg.M):
        rate = nu + g.values[i] * xi
        for _ in range(substeps):
            current = _positive_step(current, rate, h, dx2, implicit_start=i == t_prime)
        rho[i + 1, 1:-1] = current
    return GridFunction(sg, tg, rho)


def feynman_kac_psi(
    params: ModelParams,
    g: FieldPath,
    n_paths: int,
    rng: np.random.Generator,
) -> MonteCarloEstimate:
    """Оценка ψ(0,0) по свободным броуновским траекториям из x(0) = 0.

    Вместо «убийства» частиц каждая траектория получает вес
    exp(−∫[ν(x) + g·x]dt − φ(x(t_f))); интеграл по шагу берётся по трапециям,
    g постоянно на шаге.

    Returns:
        MonteCarloEstimate(среднее, стандартная ошибка)
    """
    if n_paths < 100:
        raise ValueError("n_paths должно быть не меньше 100")
    tg = g.grid
    dt = tg.dt
    sqrt_dt = np.sqrt(dt)
    x = np.zeros(n_paths)
    nu_prev = np.asarray(eval_nu(params, x), dtype=float)
    action = np.zeros(n_paths)
    for i in range(tg.M):
        x_next = x + sqrt_dt * rng.standard_normal(n_paths)
        nu_next = np.asarray(eval_nu(params, x_next), dtype=float)
        action += dt * (0.5 * (nu_prev + nu_next) + g.values[i] * 0.5 * (x + x_next))
        x, nu_prev = x_next, nu_next
    weights = np.exp(-action - np.asarray(eval_phi(params, x), dtype=float))
    metrics.particle_paths.inc(n_paths)
    mean = float(np.mean(weights))
    stderr = float(np.std(weights, ddof=1) / np.sqrt(n_paths))
    logger.debug(f"[PDE] Фейнман–Кац: ψ(0,0) ≈ {mean:.6g} ± {stderr:.2g}")
    return MonteCarloEstimate(mean, stderr)


def hjb_residual(c: GridFunction, params: ModelParams, g: FieldPath, bulk: float = 0.5) -> float:
    """Максимум невязки −∂ₜc + ½(∂ₓc)² − ½∂²ₓc − ν − g·x в объёме |x| ≤ bulk·L.

    Производная по времени — разность вперёд, пространственные — центральные.
    """
    values = c.values
    mask = c.mask if c.mask is not None else np.ones(values.shape, dtype=bool)
    x = c.space.nodes
    dx, dt = c.space.dx, c.time.dt
    cx = (values[:-1, 2:] - values[:-1, :-2]) / (2.0 * dx)
    cxx = (values[:-1, 2:] - 2.0 * values[:-1, 1:-1] + values[:-1, :-2]) / dx**2
    ct = (values[1:, 1:-1] - values[:-1, 1:-1]) / dt
    xi = x[1:-1]
    source = np.asarray(eval_nu(params, xi), dtype=float)[np.newaxis, :] + g.values[:-1, np.newaxis] * xi
    residual = -ct + 0.5 * cx**2 - 0.5 * cxx - source
    valid = (
        mask[:-1, 1:-1] & mask[:-1, 2:] & mask[:-1, :-2] & mask[1:, 1:-1]
        & (np.abs(xi) <= bulk * c.space.L)[np.newaxis, :]
    )
    return float(np.max(np.abs(residual[valid]), initial=0.0))


def dump_grid_function(gf: GridFunction, path: Path) -> None:
    """CSV: заголовок — узлы x, далее по одной строке на момент времени."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [repr(float(v)) for v in gf.space.nodes])
        for t, row in zip(gf.time.nodes, gf.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
