from datetime import datetime
from typing import Callable, Dict, Hashable, Optional, Tuple, TypeVar
import logging
import threading

from models.schemas import BoundarySampleSet, FractalKind, WhitneyCover
from services import geometry
from services.measures import boundary_sample
from services.operators import ExtensionOperator
from services.whitney import build_whitney

logger = logging.getLogger(__name__)

T = TypeVar("T")


class CacheManager:
    """Shared covers, sample sets and extension operators across the runs of a sweep"""

    def __init__(self, max_entries: int = 16):
        self.max_entries = max_entries
        self.store: Dict[Hashable, object] = {}
        self.access_log: Dict[Hashable, datetime] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.RLock()

    def get_or_build(self, key: Hashable, build: Callable[[], T]) -> T:
        """Return the cached value for key, building it on a miss.

        The build runs under the (re-entrant) lock so concurrent callers never
        build the same entry twice; nested builds reuse the lock.
        """
        with self._lock:
            if key in self.store:
                self.hits += 1
                self.access_log[key] = datetime.now()
                return self.store[key]
            self.misses += 1
            logger.info(f"Cache miss for {key}; building")
            value = build()
            self.store[key] = value
            self.access_log[key] = datetime.now()
            if len(self.store) > self.max_entries:
                self._evict_oldest()
            return value

    def _evict_oldest(self) -> None:
        oldest = min(self.access_log, key=self.access_log.get)
        self.store.pop(oldest, None)
        self.access_log.pop(oldest, None)
        logger.debug(f"Evicted {oldest} from the cache")

    def cover(self, kind: FractalKind, max_level: Optional[int] = None) -> WhitneyCover:
        spec = geometry.fractal_spec(kind)
        return self.get_or_build(("cover", spec.kind, max_level), lambda: build_whitney(spec, max_level=max_level))

    def samples(self, kind: FractalKind, n: int, seed: int) -> BoundarySampleSet:
        spec = geometry.fractal_spec(kind)
        return self.get_or_build(("samples", spec.kind, n, seed), lambda: boundary_sample(spec, n, seed))

    def extension(self, kind: FractalKind, max_level: Optional[int], n: int, seed: int) -> ExtensionOperator:
        key: Tuple = ("extension", FractalKind(kind), max_level, n, seed)
        return self.get_or_build(key, lambda: ExtensionOperator(self.cover(kind, max_level),
                                                                self.samples(kind, n, seed)))

    def clear(self) -> None:
        with self._lock:
            count = len(self.store)
            self.store.clear()
            self.access_log.clear()
        logger.info(f"Cleared {count} cached entries")
