import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from core.config import get_settings
from core.logging_config import setup_logging
from core.seeding import rng_for, split_seed
from services.cache_manager import CacheManager
from services.worker_pool import ordered_map


def test_settings_read_prefixed_environment(monkeypatch):
    assert get_settings().WORKERS == 1
    monkeypatch.setenv("FTL_WORKERS", "3")
    monkeypatch.setenv("FTL_QUAD_TOL", "0.01")
    get_settings.cache_clear()
    settings = get_settings()
    assert settings.WORKERS == 3
    assert settings.QUAD_TOL == 0.01


def test_settings_are_cached():
    assert get_settings() is get_settings()


def test_log_file_is_created(tmp_path, monkeypatch):
    log_file = tmp_path / "logs" / "run.log"
    monkeypatch.setenv("FTL_LOG_FILE", str(log_file))
    get_settings.cache_clear()
    setup_logging()
    logging.getLogger("fractal").info("hello")
    root = logging.getLogger()
    for handler in list(root.handlers):
        handler.flush()
        handler.close()
        root.removeHandler(handler)
    assert "hello" in log_file.read_text()


def test_rng_for_is_reproducible():
    a = rng_for(5, 1, 2).random(4)
    b = rng_for(5, 1, 2).random(4)
    np.testing.assert_array_equal(a, b)


def test_rng_for_separates_counters():
    assert not np.array_equal(rng_for(5, 1).random(4), rng_for(5, 2).random(4))
    assert not np.array_equal(rng_for(5, 1).random(4), rng_for(6, 1).random(4))


def test_split_seed():
    assert split_seed(11, 3) == split_seed(11, 3)
    assert split_seed(11, 3) != split_seed(11, 4)
    assert split_seed(11, 3) >= 0


def test_ordered_map_keeps_item_order():
    items = list(range(50))
    assert ordered_map(lambda i: i * i, items, workers=4) == [i * i for i in items]
    assert ordered_map(lambda i: i * i, items, workers=1) == [i * i for i in items]


def test_ordered_map_reads_worker_setting(monkeypatch):
    monkeypatch.setenv("FTL_WORKERS", "4")
    get_settings.cache_clear()
    assert ordered_map(str, [3, 1, 2]) == ["3", "1", "2"]


def test_cache_counts_hits_and_misses():
    cache = CacheManager()
    calls = []

    def build():
        calls.append(1)
        return "value"

    assert cache.get_or_build("key", build) == "value"
    assert cache.get_or_build("key", build) == "value"
    assert len(calls) == 1
    assert (cache.hits, cache.misses) == (1, 1)


def test_cache_evicts_beyond_capacity():
    cache = CacheManager(max_entries=2)
    for key in ("a", "b", "c"):
        cache.get_or_build(key, lambda: key)
    assert len(cache.store) == 2
    assert "c" in cache.store
    cache.clear()
    assert cache.store == {}


def test_cache_builds_once_under_concurrent_callers():
    cache = CacheManager()
    calls = []

    def build():
        calls.append(1)
        time.sleep(0.05)
        return "value"

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda _: cache.get_or_build("key", build), range(8)))
    assert results == ["value"] * 8
    assert len(calls) == 1
    assert (cache.hits, cache.misses) == (7, 1)


def test_cache_allows_nested_builds():
    cache = CacheManager()
    outer = cache.get_or_build("outer", lambda: cache.get_or_build("inner", lambda: 2) + 1)
    assert outer == 3
    assert set(cache.store) == {"outer", "inner"}
