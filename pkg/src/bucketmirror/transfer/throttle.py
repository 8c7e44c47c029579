"""A per-worker share of the global in-flight request budget.

The global ceiling is enforced by static partitioning: each of at most `max_workers` workers holds `per_worker_share` permits, so the total never exceeds `global_max_inflight` without any coordination between processes.
"""

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

from bucketmirror.errors import ThrottleError

# simultaneous write requests accepted per bucket prefix
S3_PREFIX_WRITE_LIMIT = 3500


@dataclass(frozen=True)
class ThrottleConfig:
    global_max_inflight: int = S3_PREFIX_WRITE_LIMIT
    per_worker_share: Optional[int] = None
    max_workers: int = 1

    def __post_init__(self):
        if self.global_max_inflight < 1 or self.max_workers < 1:
            raise ValueError(
                f"global_max_inflight and max_workers must be positive, got {self.global_max_inflight} and {self.max_workers}"
            )
        if self.per_worker_share is None:
            object.__setattr__(
                self, "per_worker_share", max(self.global_max_inflight // self.max_workers, 1)
            )
        if self.per_worker_share < 1:
            raise ValueError(f"per_worker_share must be positive, got {self.per_worker_share}")
        if self.per_worker_share * self.max_workers > self.global_max_inflight:
            raise ValueError(
                f"per_worker_share ({self.per_worker_share}) x max_workers ({self.max_workers}) exceeds global_max_inflight ({self.global_max_inflight})"
            )


@dataclass(frozen=True)
class Permit:
    number: int


class Throttle:
    """Counting semaphore over this worker's share of permits."""

    def __init__(self, config: ThrottleConfig = None):
        self.config = config or ThrottleConfig()
        self._semaphore = threading.BoundedSemaphore(self.config.per_worker_share)
        self._lock = threading.Lock()
        self._outstanding: set[int] = set()
        self._numbers = itertools.count(1)

    @property
    def outstanding(self) -> int:
        with self._lock:
            return len(self._outstanding)

    def acquire(self, timeout: float = None) -> Permit:
        """Block until a permit is available.

        Raises:
            TimeoutError: if `timeout` seconds pass first.
        """
        if not self._semaphore.acquire(timeout=timeout):
            raise TimeoutError(f"No throttle permit available within {timeout}s")
        with self._lock:
            permit = Permit(next(self._numbers))
            self._outstanding.add(permit.number)
        return permit

    def release(self, permit: Permit) -> None:
        """Return a permit.

        Raises:
            ThrottleError: `permit` was not acquired from this throttle or was already released.
        """
        with self._lock:
            if not isinstance(permit, Permit) or permit.number not in self._outstanding:
                raise ThrottleError(f"Release of a permit that is not outstanding: {permit!r}")
            self._outstanding.discard(permit.number)
        self._semaphore.release()

    @contextmanager
    def permit(self) -> Iterator[Permit]:
        permit = self.acquire()
        try:
            yield permit
        finally:
            self.release(permit)
