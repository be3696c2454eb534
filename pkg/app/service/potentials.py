"""Потенциал ν, терминальная стоимость φ и весовая функция e^{−φ}."""

import numpy as np
from numpy.polynomial import polynomial as P

from app.models.models import ModelParams, SpaceGrid


def eval_nu(params: ModelParams, x):
    """ν(x) = Σ_k nu_coeffs[k]·x^k (скаляр или массив)."""
    return P.polyval(x, params.nu_coeffs) if params.nu_coeffs else np.zeros_like(np.asarray(x, dtype=float))


def eval_phi(params: ModelParams, x):
    """φ(x) = Σ_k phi_coeffs[k]·x^k; по умолчанию ½(x−1)²."""
    return P.polyval(x, params.phi_coeffs) if params.phi_coeffs else np.zeros_like(np.asarray(x, dtype=float))


def terminal_weight(params: ModelParams, grid: SpaceGrid) -> np.ndarray:
    """Граничное условие ψ(x, t_f) = e^{−φ(x)} в узлах сетки."""
    return np.exp(-eval_phi(params, grid.nodes))
