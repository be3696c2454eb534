import threading
from typing import Callable, Hashable, Optional, TypeVar

from cachetools import LRUCache

from app.config.config import CacheSettings
from app.logger.logger import logger
from app.metrics import metrics

T = TypeVar("T")


class Cache:
    """Потокобезопасный LRU-кэш детерминированных одночастичных решений."""

    def __init__(self, maxsize: int = 64) -> None:
        self._enabled = maxsize > 0
        self._storage: LRUCache = LRUCache(maxsize=max(maxsize, 1))
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        logger.debug("[CACHE] Кэш создан, maxsize=%d", maxsize)

    def get(self, key: Hashable) -> Optional[object]:
        if not self._enabled:
            return None
        with self._lock:
            value = self._storage.get(key)
            if value is None:
                self.misses += 1
                return None
            self.hits += 1
        metrics.cache_hits.inc()
        logger.debug("[CACHE] Попадание в кэш")
        return value

    def set(self, key: Hashable, value: object) -> None:
        if not self._enabled:
            return
        with self._lock:
            self._storage[key] = value

    def get_or_compute(self, key: Hashable, compute: Callable[[], T]) -> T:
        cached = self.get(key)
        if cached is not None:
            return cached
        # Вычисление вне блокировки: параллельные промахи по одному ключу дают одинаковый результат
        value = compute()
        self.set(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._storage.clear()
            self.hits = 0
            self.misses = 0
        logger.info("[CACHE] Кэш очищен")

    def __len__(self) -> int:
        with self._lock:
            return len(self._storage)


settings = CacheSettings()
cache = Cache(maxsize=settings.solve_cache_size)
