# tests/test_cache.py
from concurrent.futures import ThreadPoolExecutor
from unittest.mock import MagicMock, patch

from app.cache.cache import Cache


class TestCache:
    def test_set_and_get(self):
        cache_instance = Cache(maxsize=4)
        cache_instance.set("key", {"value": 1})
        assert cache_instance.get("key") == {"value": 1}
        assert cache_instance.hits == 1

    def test_miss(self):
        cache_instance = Cache(maxsize=4)
        assert cache_instance.get("absent") is None
        assert cache_instance.misses == 1

    def test_least_recently_used_evicted(self):
        cache_instance = Cache(maxsize=2)
        cache_instance.set("a", 1)
        cache_instance.set("b", 2)
        cache_instance.get("a")
        cache_instance.set("c", 3)
        assert cache_instance.get("b") is None
        assert cache_instance.get("a") == 1
        assert len(cache_instance) == 2

    def test_get_or_compute_calls_once(self):
        cache_instance = Cache(maxsize=4)
        calls = []

        def compute():
            calls.append(1)
            return "value"

        assert cache_instance.get_or_compute(("k", 1), compute) == "value"
        assert cache_instance.get_or_compute(("k", 1), compute) == "value"
        assert len(calls) == 1

    def test_disabled(self):
        cache_instance = Cache(maxsize=0)
        cache_instance.set("key", 1)
        assert cache_instance.get("key") is None
        assert len(cache_instance) == 0

    def test_clear(self):
        cache_instance = Cache(maxsize=4)
        cache_instance.set("key", 1)
        cache_instance.get("key")
        cache_instance.clear()
        assert len(cache_instance) == 0
        assert cache_instance.hits == 0

    def test_concurrent_access(self):
        cache_instance = Cache(maxsize=8)

        def work(i):
            return cache_instance.get_or_compute(i % 4, lambda: (i % 4) * 10)

        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(work, range(64)))
        assert results == [(i % 4) * 10 for i in range(64)]
        assert len(cache_instance) == 4

    def test_len_takes_lock(self):
        cache_instance = Cache(maxsize=4)
        cache_instance.set("key", 1)
        with patch.object(cache_instance, "_lock", MagicMock()) as lock:
            assert len(cache_instance) == 1
        lock.__enter__.assert_called_once()
