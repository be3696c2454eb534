"""Двухвременные ядра, их ремонт до неотрицательной определённости и выборка гауссовых полей."""

import csv
from pathlib import Path

import numpy as np
from scipy import linalg

from app.logger.logger import logger
from app.metrics import metrics
from app.models.arrays import CovarianceFactor, FieldPath, TwoTimeKernel
from app.models.models import TimeGrid
from app.service.errors import GridMismatchError, NotSymmetricError

DEFAULT_JITTER = 1e-10
SYMMETRY_RTOL = 1e-12


def kernel_difference(D: TwoTimeKernel, F: TwoTimeKernel) -> TwoTimeKernel:
    """Ковариация внутреннего поля ⟨h h⟩ = D − F."""
    if D.grid != F.grid:
        raise GridMismatchError(f"ядра заданы на разных сетках: M={D.grid.M} и M={F.grid.M}")
    diff = D.values - F.values
    return TwoTimeKernel(D.grid, 0.5 * (diff + diff.T))


def psd_project(K: TwoTimeKernel, jitter: float = DEFAULT_JITTER) -> CovarianceFactor:
    """Ремонтирует ядро до неотрицательно определённого и строит корень R.

    Отрицательные собственные значения обнуляются, к спектру добавляется
    jitter·λ_max. Доля отброшенной массы Σ|λ<0| / Σ|λ| возвращается как диагностика.

    Args:
        K: Симметричное ядро
        jitter: Относительная добавка к диагонали

    Returns:
        CovarianceFactor с R·Rᵀ = отремонтированная матрица

    Raises:
        NotSymmetricError: Ядро заметно несимметрично
    """
    values = K.values
    scale = max(K.max_abs(), 1.0)
    if np.max(np.abs(values - values.T)) > SYMMETRY_RTOL * scale:
        raise NotSymmetricError("psd_project ожидает симметричное ядро")

    eigvals, eigvecs = linalg.eigh(0.5 * (values + values.T))
    total = float(np.sum(np.abs(eigvals)))
    negative = float(np.sum(np.abs(eigvals[eigvals < 0.0])))
    clipped_mass = negative / total if total > 0.0 else 0.0

    clipped = np.clip(eigvals, 0.0, None)
    lam_max = float(clipped.max(initial=0.0))
    repaired_eigs = clipped + jitter * lam_max
    root = eigvecs * np.sqrt(repaired_eigs)
    repaired = (eigvecs * repaired_eigs) @ eigvecs.T
    repaired = 0.5 * (repaired + repaired.T)

    metrics.last_clipped_mass.set(clipped_mass)
    if clipped_mass > 0.0:
        logger.debug(f"[FIELDS] Отброшено {clipped_mass:.3e} спектральной массы")
    return CovarianceFactor(
        grid=K.grid, root=root, repaired=repaired, clipped_mass=clipped_mass, jitter=jitter
    )


def sample_field(factor: CovarianceFactor, rng: np.random.Generator) -> FieldPath:
    """Одна траектория R·z, z ~ N(0, I)."""
    z = rng.standard_normal(factor.root.shape[1])
    return FieldPath(factor.grid, factor.root @ z)


def sample_fields(factor: CovarianceFactor, rng: np.random.Generator, count: int) -> np.ndarray:
    """count траекторий одним матричным умножением, массив (count, M+1)."""
    z = rng.standard_normal((count, factor.root.shape[1]))
    return z @ factor.root.T


def save_kernel(kernel: TwoTimeKernel, path: Path) -> None:
    """CSV: первая строка — времена сетки, далее строки матрицы."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([repr(float(t)) for t in kernel.grid.nodes])
        for row in kernel.values:
            writer.writerow([repr(float(v)) for v in row])


def load_kernel(path: Path, grid: TimeGrid | None = None) -> TwoTimeKernel:
    """Читает ядро, записанное save_kernel."""
    data = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    times, values = data[0], data[1:]
    if grid is None:
        grid = TimeGrid(t_f=float(times[-1]), M=len(times) - 1)
    elif not np.allclose(times, grid.nodes, rtol=0.0, atol=1e-12):
        raise GridMismatchError(f"времена в {path} не совпадают с сеткой")
    return TwoTimeKernel(grid, values)
