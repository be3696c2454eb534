# tests/conftest.py
import numpy as np
import pytest

from app.cache.cache import cache
from app.models.models import ModelParams, SpaceGrid, TimeGrid

QUADRATIC = {"nu_coeffs": (0.0, 0.0, 0.5), "phi_coeffs": (0.0, 0.0, 0.5)}


@pytest.fixture(autouse=True)
def clear_cache():
    cache.clear()
    yield
    cache.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def default_params():
    """ν = x²/2 + x⁴/24, φ = ½(x−1)², t_f = 1."""
    return ModelParams(J=0.0)


@pytest.fixture
def quadratic_params():
    """ν = x²/2, φ = x²/2: c(0,0) = t_f/2."""
    return ModelParams(J=0.0, **QUADRATIC)


@pytest.fixture
def target_params():
    """ν = x²/2, φ = ½(x−1)²: c(0,0) = ¾ + ¼e⁻²."""
    return ModelParams(J=0.0, nu_coeffs=(0.0, 0.0, 0.5))


@pytest.fixture
def tg():
    return TimeGrid(t_f=1.0, M=64)


@pytest.fixture
def sg():
    return SpaceGrid(L=6.0, n_x=241)


@pytest.fixture
def fine_tg():
    return TimeGrid(t_f=1.0, M=256)


@pytest.fixture
def fine_sg():
    return SpaceGrid(L=6.0, n_x=481)


@pytest.fixture
def write_config(tmp_path):
    """Пишет файл конфигурации section.key = value и возвращает путь к нему."""

    def _write(lines: dict, name: str = "run.env"):
        run_dir = tmp_path / "out"
        body = [f"{key} = {value}" for key, value in lines.items()]
        if "output_dir" not in lines:
            body.append(f"output_dir = {run_dir}")
        path = tmp_path / name
        path.write_text("\n".join(body) + "\n", encoding="utf-8")
        return path

    return _write
