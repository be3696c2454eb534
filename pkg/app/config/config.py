from pathlib import Path
from typing import Any, Dict, Optional

from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.models.models import (
    ModelParams,
    OracleConfig,
    SolverConfig,
    SpaceGrid,
    TimeGrid,
    check_odd,
)


class AppSettings(BaseSettings):
    output_root: Path = Field(Path("runs"))
    log_level: str = Field("INFO")
    log_dir: Path = Field(Path("logs"))
    debug: bool = Field(False)

    model_config = SettingsConfigDict(
        env_prefix="RSCONTROL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


class CacheSettings(BaseSettings):
    solve_cache_size: int = Field(64, ge=0)

    model_config = SettingsConfigDict(
        env_prefix="RSCONTROL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


class ConfigError(Exception):
    """Ошибка конфигурации запуска; key — путь к ключу вида "solver.damping"."""

    def __init__(self, key: str, detail: str) -> None:
        super().__init__(f"{key}: {detail}")
        self.key = key
        self.detail = detail

    @classmethod
    def from_validation(cls, exc: ValidationError) -> "ConfigError":
        messages = []
        keys = []
        for err in exc.errors():
            key = ".".join(str(part) for part in err["loc"]) or "<root>"
            keys.append(key)
            messages.append(f"{key}: {err['msg']}")
        error = cls(keys[0] if keys else "<root>", "; ".join(messages))
        error.args = ("; ".join(messages),)
        return error


class GridBlock(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    M: int = Field(64, ge=2)
    L: float = Field(6.0, gt=0.0)
    n_x: int = Field(241, ge=3)

    @field_validator("n_x")
    @classmethod
    def validate_n_x(cls, v: int) -> int:
        return check_odd(v)


class RunConfig(BaseModel):
    """Полная конфигурация одного запуска."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelParams
    grid: GridBlock = Field(default_factory=GridBlock)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    output_dir: Optional[Path] = None

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(t_f=self.model.t_f, M=self.grid.M)

    @property
    def space_grid(self) -> SpaceGrid:
        return SpaceGrid(L=self.grid.L, n_x=self.grid.n_x)

    def run_dir(self, settings: Optional[AppSettings] = None) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path((settings or AppSettings()).output_root)


def _read_flat(path: Path) -> Dict[str, str]:
    flat: Dict[str, str] = {}
    with path.open(encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.error:
                raise ConfigError(f"line {binding.original.line}", "не удалось разобрать строку")
            if binding.key is None:
                continue
            if binding.value is None:
                raise ConfigError(binding.key, "нет значения")
            if binding.key in flat:
                raise ConfigError(binding.key, "ключ задан повторно")
            flat[binding.key] = binding.value
    return flat


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(key, f"'{part}' уже задан как значение, а не секция")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(key, "ключ совпадает с именем секции")
        node[parts[-1]] = value
    return nested


def _render(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Плоское представление конфигурации, пригодное для повторной загрузки."""
    lines = []
    data = config.model_dump()
    for section in ("model", "grid", "solver", "oracle"):
        for key, value in data[section].items():
            lines.append(f"{section}.{key} = {_render(value)}")
    if config.output_dir is not None:
        lines.append(f"output_dir = {config.output_dir}")
    return "\n".join(lines) + "\n"


def parse_config(path: Path | str) -> RunConfig:
    """Читает и проверяет файл конфигурации без побочных эффектов."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "файл конфигурации не найден")
    nested = _nest(_read_flat(path))
    try:
        return RunConfig.model_validate(nested)
    except ValidationError as exc:
        raise ConfigError.from_validation(exc) from exc


def load_config(path: Path | str, settings: Optional[AppSettings] = None) -> RunConfig:
    """Загружает конфигурацию и пишет её эффективную копию в каталог запуска.

    Args:
        path: Путь к файлу вида "section.key = value"
        settings: Настройки процесса (каталог результатов по умолчанию)

    Returns:
        Проверенный RunConfig со значениями по умолчанию для опущенных ключей

    Raises:
        ConfigError: Ошибка разбора, нарушение ограничения или неизвестный ключ
    """
    config = parse_config(path)
    run_dir = config.run_dir(settings)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "effective_config.env").write_text(dump_config(config), encoding="utf-8")
    return config
