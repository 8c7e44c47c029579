"""Bucket/object abstractions shared by the simulated and wire backends, and the part arithmetic of server-side multipart copies."""

import threading
from abc import ABC, abstractmethod
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB
TiB = 1024 * GiB

DEFAULT_PART_SIZE = 16 * MiB
MIN_PART_SIZE = 8 * MiB
MAX_PART_SIZE = 128 * MiB


@dataclass(frozen=True)
class ObjectRef:
    bucket: str
    key: str

    def __post_init__(self):
        if not self.bucket or not self.key:
            raise ValueError(
                f"Object references need a non-empty bucket and key, got bucket={self.bucket!r}, key={self.key!r}"
            )
        if self.key.startswith("/"):
            raise ValueError(f"Object keys must not start with '/': {self.key!r}")

    def to_dict(self) -> dict:
        return {"bucket": self.bucket, "key": self.key}

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectRef":
        return cls(data["bucket"], data["key"])

    def __str__(self) -> str:
        return f"{self.bucket}/{self.key}"


@dataclass(frozen=True)
class ObjectMeta:
    size: int
    etag: str
    readable: bool = True


@dataclass(frozen=True)
class PartSpec:
    """A 1-based part covering the inclusive byte range [start, end]."""

    part_number: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def range_header(self) -> str:
        return f"bytes={self.start}-{self.end}"


class UploadState(str, Enum):
    OPEN = "OPEN"
    COMPLETED = "COMPLETED"
    ABORTED = "ABORTED"


@dataclass
class MultipartUpload:
    upload_id: str
    target: ObjectRef
    completed_parts: dict[int, str] = field(default_factory=dict)
    state: UploadState = UploadState.OPEN


@dataclass
class StoreMetrics:
    """Snapshot of request accounting.

    Attributes:
        inflight_writes: write requests (part copies, direct copies) currently executing.

        max_inflight: the highest `inflight_writes` observed since the last reset.

        completed_copies: per destination key, the number of copies that completed (multipart completions plus direct copies).

        bytes_copied: total bytes copied by part copies and direct copies.
    """

    inflight_writes: int = 0
    max_inflight: int = 0
    completed_copies: dict[str, int] = field(default_factory=dict)
    bytes_copied: int = 0


def compute_parts(size: int, part_size: int) -> list[PartSpec]:
    """Tile `[0, size)` with consecutive parts of `part_size` bytes, the last one possibly shorter.

    Args:
        size: object size in bytes.

        part_size: bytes per part, must be positive.

    Returns:
        the parts in ascending order; empty when `size` is 0 (such objects are copied directly).
    """
    if part_size <= 0:
        raise ValueError(f"part_size must be positive, got {part_size}")
    if size < 0:
        raise ValueError(f"size must be non-negative, got {size}")
    return [
        PartSpec(number, start, min(start + part_size, size) - 1)
        for number, start in enumerate(range(0, size, part_size), start=1)
    ]


class RequestMeter:
    """Thread-safe accounting of in-flight writes and completed copies within one process."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self) -> None:
        with self._lock:
            self._inflight = 0
            self._max_inflight = 0
            self._copies: Counter = Counter()
            self._bytes = 0

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._lock:
            self._inflight += 1
            self._max_inflight = max(self._max_inflight, self._inflight)
        try:
            yield
        finally:
            with self._lock:
                self._inflight -= 1

    def copied(self, nbytes: int) -> None:
        with self._lock:
            self._bytes += nbytes

    def completed(self, key: str) -> None:
        with self._lock:
            self._copies[key] += 1

    def snapshot(self) -> StoreMetrics:
        with self._lock:
            return StoreMetrics(
                inflight_writes=self._inflight,
                max_inflight=self._max_inflight,
                completed_copies=dict(self._copies),
                bytes_copied=self._bytes,
            )


class ObjectStore(ABC):
    """The subset of an S3-like API needed for server-side mirroring."""

    @abstractmethod
    def create_bucket(self, bucket: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def head_object(self, ref: ObjectRef) -> ObjectMeta:
        """Raises NotFound, PermissionDenied or NoSuchBucket."""
        raise NotImplementedError

    @abstractmethod
    def copy_object(self, source: ObjectRef, dest: ObjectRef) -> str:
        """Single-request server-side copy, used for zero-byte objects. Returns the new etag."""
        raise NotImplementedError

    @abstractmethod
    def create_multipart(self, target: ObjectRef) -> MultipartUpload:
        raise NotImplementedError

    @abstractmethod
    def upload_part_copy(
        self, upload: MultipartUpload, source: ObjectRef, part: PartSpec
    ) -> str:
        """Copy a byte range of `source` into part `part.part_number` of `upload`. Returns the part etag."""
        raise NotImplementedError

    @abstractmethod
    def complete_multipart(self, upload: MultipartUpload, etags: list[str]) -> str:
        """Assemble the target from parts 1..len(etags). Returns the final etag."""
        raise NotImplementedError

    @abstractmethod
    def abort_multipart(self, upload: MultipartUpload) -> None:
        raise NotImplementedError

    @abstractmethod
    def list_objects(self, bucket: str, prefix: str = "") -> list[str]:
        """Keys of visible objects under `prefix`, sorted."""
        raise NotImplementedError

    @abstractmethod
    def list_incomplete_uploads(self, bucket: str) -> list[MultipartUpload]:
        raise NotImplementedError

    @abstractmethod
    def instrument(self) -> StoreMetrics:
        raise NotImplementedError

    @abstractmethod
    def reset_metrics(self) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


def parse_size(value: Optional[object]) -> Optional[int]:
    """Parse sizes such as 16777216, "16MiB", "8 MiB", "1.5GiB" or "512KiB" into bytes."""
    if value is None or isinstance(value, int):
        return value
    if isinstance(value, float):
        return int(value)
    text = str(value).strip().replace(" ", "")
    units = {"TIB": TiB, "GIB": GiB, "MIB": MiB, "KIB": KiB, "TB": 10**12, "GB": 10**9, "MB": 10**6, "KB": 10**3, "B": 1}
    for suffix, factor in units.items():
        if text.upper().endswith(suffix):
            return int(float(text[: -len(suffix)]) * factor)
    return int(text)
