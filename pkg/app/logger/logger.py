import logging
from pathlib import Path
import sys

from app.config.config import AppSettings

settings = AppSettings()

# Путь к папке логов
LOG_DIR = Path(settings.log_dir)
LOG_FILE = LOG_DIR / "app.log"

# Создаём форматтер
formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

logger = logging.getLogger("rscontrol")
logger.setLevel(settings.log_level.upper())
logger.propagate = True

if not logger.handlers:
    # Обработчик, пишущий в stdout
    stdout_handler = logging.StreamHandler(sys.stdout)
    stdout_handler.setLevel(logging.DEBUG)
    stdout_handler.setFormatter(formatter)
    logger.addHandler(stdout_handler)


def enable_file_log(path: Path | None = None) -> logging.Handler:
    """Добавляет файловый обработчик (по умолчанию logs/app.log).

    Args:
        path: Путь к файлу лога; папка создаётся при необходимости

    Returns:
        Созданный обработчик, чтобы вызывающий код мог его снять
    """
    path = Path(path) if path is not None else LOG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(path, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)
    return file_handler


def disable_file_log(handler: logging.Handler) -> None:
    logger.removeHandler(handler)
    handler.close()
