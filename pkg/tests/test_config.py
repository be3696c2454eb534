# tests/test_config.py
import pytest

from app.config.config import ConfigError, dump_config, load_config, parse_config
from app.models.models import DEFAULT_NU, OracleConfig, SolverConfig


class TestLoadConfig:
    def test_minimal_config_gets_defaults(self, write_config):
        config = parse_config(write_config({"model.J": 0.2, "model.t_f": 1.5}))
        assert config.model.J == 0.2
        assert config.model.t_f == 1.5
        assert config.model.nu_coeffs == DEFAULT_NU
        assert config.grid.M == 64
        assert config.grid.n_x == 241
        assert config.solver == SolverConfig()
        assert config.oracle == OracleConfig()
        assert config.time_grid.t_f == 1.5

    def test_even_n_x_names_key(self, write_config):
        path = write_config({"model.J": 0.2, "grid.n_x": 240})
        with pytest.raises(ConfigError) as exc:
            parse_config(path)
        assert exc.value.key == "grid.n_x"
        assert "n_x" in str(exc.value)

    def test_damping_above_one_rejected(self, write_config):
        path = write_config({"model.J": 0.2, "solver.damping": 1.5})
        with pytest.raises(ConfigError) as exc:
            parse_config(path)
        assert exc.value.key == "solver.damping"

    def test_unknown_key_rejected(self, write_config):
        path = write_config({"model.J": 0.2, "solver.temperature": 3})
        with pytest.raises(ConfigError, match="solver.temperature"):
            parse_config(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "dup.env"
        path.write_text("model.J = 0.1\nmodel.J = 0.2\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="model.J"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.env")

    def test_coefficient_lists(self, write_config):
        path = write_config({"model.J": 0.0, "model.nu_coeffs": "0, 0, 0.5", "model.phi_coeffs": "0, 0, 0.5"})
        config = parse_config(path)
        assert config.model.is_quadratic()

    def test_effective_config_echo_reloads_identically(self, write_config, tmp_path):
        path = write_config({"model.J": 0.3, "solver.seed": 7, "solver.tol": 0.1 + 0.2})
        config = load_config(path)
        echo = tmp_path / "out" / "effective_config.env"
        assert echo.is_file()
        assert echo.read_text(encoding="utf-8") == dump_config(config)
        assert parse_config(echo) == config
