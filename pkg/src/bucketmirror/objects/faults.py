"""Deterministic fault injection for the simulated object store.

A `FaultPlan` describes which requests fail and how slow requests are. Randomness is drawn from a generator seeded by `(seed, operation, key, n)` where `n` counts earlier requests of the same operation on the same key. Outcomes therefore depend only on the seed and on the order of requests per key, not on how requests for different keys interleave across threads.
"""

import threading
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from bucketmirror.errors import IntermittentError, PermissionDenied

Latency = Union[float, tuple[float, float]]


@dataclass
class FaultPlan:
    """Faults to inject.

    Attributes:
        intermittent_error_rate: probability that any request fails with IntermittentError.

        intermittent_fail_counts: key -> number of consecutive requests on that key that fail with IntermittentError before requests succeed.

        denied_keys: keys whose reads fail with PermissionDenied.

        latency: seconds added to every request, either fixed or a (low, high) uniform range.

        seed: seed of all random draws.
    """

    intermittent_error_rate: float = 0.0
    intermittent_fail_counts: dict[str, int] = field(default_factory=dict)
    denied_keys: set[str] = field(default_factory=set)
    latency: Latency = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.intermittent_error_rate <= 1.0:
            raise ValueError(
                f"intermittent_error_rate must be in [0, 1], got {self.intermittent_error_rate}"
            )
        if isinstance(self.latency, (list, tuple)):
            low, high = self.latency
            if not 0 <= low <= high:
                raise ValueError(f"latency range must satisfy 0 <= low <= high, got {self.latency}")
            self.latency = (float(low), float(high))
        elif self.latency < 0:
            raise ValueError(f"latency must be non-negative, got {self.latency}")
        self.denied_keys = set(self.denied_keys)

    @classmethod
    def from_dict(cls, data: dict) -> "FaultPlan":
        data = dict(data or {})
        latency = data.get("latency", 0.0)
        return cls(
            intermittent_error_rate=float(data.get("intermittent_error_rate", 0.0)),
            intermittent_fail_counts={
                str(k): int(v) for k, v in (data.get("intermittent_fail_counts") or {}).items()
            },
            denied_keys=set(data.get("denied_keys") or ()),
            latency=tuple(latency) if isinstance(latency, (list, tuple)) else float(latency),
            seed=int(data.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "intermittent_error_rate": self.intermittent_error_rate,
            "intermittent_fail_counts": dict(self.intermittent_fail_counts),
            "denied_keys": sorted(self.denied_keys),
            "latency": list(self.latency) if isinstance(self.latency, tuple) else self.latency,
            "seed": self.seed,
        }


class FaultInjector:
    """Applies a FaultPlan to requests. Keeps a history of `(operation, key, outcome)` triples."""

    def __init__(self, plan: FaultPlan = None):
        self.plan = plan or FaultPlan()
        self._lock = threading.Lock()
        self._remaining = Counter(self.plan.intermittent_fail_counts)
        self._requests: Counter = Counter()
        self.history: list[tuple[str, str, str]] = []

    def _generator(self, operation: str, key: str) -> np.random.Generator:
        with self._lock:
            n = self._requests[(operation, key)]
            self._requests[(operation, key)] += 1
        return np.random.default_rng(
            [self.plan.seed, zlib.crc32(f"{operation}:{key}".encode()), n]
        )

    def _latency(self, rng: np.random.Generator) -> float:
        latency = self.plan.latency
        if isinstance(latency, tuple):
            return float(rng.uniform(*latency))
        return latency

    def before(self, operation: str, key: str, read: bool = True) -> None:
        """Sleep for the request latency, then raise the injected fault, if any.

        Args:
            operation: request name, e.g. "head_object".

            key: the object key the request is about.

            read: whether the request reads `key` (only reads are subject to permission denials).
        """
        rng = self._generator(operation, key)
        delay = self._latency(rng)
        if delay > 0:
            time.sleep(delay)
        draw = rng.random()

        outcome = "ok"
        if read and key in self.plan.denied_keys:
            outcome = "denied"
        else:
            with self._lock:
                if self._remaining[key] > 0:
                    self._remaining[key] -= 1
                    outcome = "intermittent"
            if outcome == "ok" and draw < self.plan.intermittent_error_rate:
                outcome = "intermittent"

        with self._lock:
            self.history.append((operation, key, outcome))
        if outcome == "denied":
            raise PermissionDenied(f"Access denied reading '{key}'", key=key)
        if outcome == "intermittent":
            raise IntermittentError(
                f"Intermittent failure during {operation} on '{key}'", key=key
            )
