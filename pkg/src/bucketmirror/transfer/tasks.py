"""Transfer requests, per-file status and the aggregate snapshot published while a transfer runs."""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional

from bucketmirror.errors import TransferValidationError
from bucketmirror.objects.base import (
    DEFAULT_PART_SIZE,
    GiB,
    MAX_PART_SIZE,
    MIN_PART_SIZE,
    ObjectRef,
    parse_size,
)

GB = 10**9


@dataclass(frozen=True)
class TransferRequest:
    """A batch of objects to mirror from one bucket to another.

    Attributes:
        source_bucket: bucket holding the objects.

        dest_bucket: bucket receiving the copies.

        keys: object keys, in the order their copies are enqueued.

        dest_prefix: prepended to every key to form its destination key.

        part_size: bytes per byte-range part copy.

        file_parallelism: concurrent part copies within one file.
    """

    source_bucket: str
    dest_bucket: str
    keys: tuple[str, ...]
    dest_prefix: str = ""
    part_size: int = DEFAULT_PART_SIZE
    file_parallelism: int = 4

    def __post_init__(self):
        object.__setattr__(self, "keys", tuple(self.keys))
        object.__setattr__(self, "part_size", parse_size(self.part_size))

    def validate(
        self, min_part_size: int = MIN_PART_SIZE, max_part_size: int = MAX_PART_SIZE
    ) -> "TransferRequest":
        """Check the request against the configured part size bounds.

        Raises:
            TransferValidationError: naming the offending field.
        """
        if not self.source_bucket:
            raise TransferValidationError("source_bucket must be non-empty")
        if not self.dest_bucket:
            raise TransferValidationError("dest_bucket must be non-empty")
        if not self.keys:
            raise TransferValidationError("keys must be a non-empty list")
        if len(set(self.keys)) != len(self.keys):
            duplicates = sorted({k for k in self.keys if self.keys.count(k) > 1})
            raise TransferValidationError(f"keys must be unique, duplicated: {duplicates}")
        for key in self.keys:
            if not key or key.startswith("/"):
                raise TransferValidationError(
                    f"keys must be non-empty and must not start with '/': {key!r}"
                )
        if self.dest_prefix.startswith("/"):
            raise TransferValidationError(
                f"dest_prefix must not start with '/': {self.dest_prefix!r}"
            )
        if not min_part_size <= self.part_size <= max_part_size:
            raise TransferValidationError(
                f"part_size must be within [{min_part_size}, {max_part_size}] bytes, got {self.part_size}"
            )
        if self.file_parallelism < 1:
            raise TransferValidationError(
                f"file_parallelism must be positive, got {self.file_parallelism}"
            )
        return self

    def source(self, key: str) -> ObjectRef:
        return ObjectRef(self.source_bucket, key)

    def dest(self, key: str) -> ObjectRef:
        return ObjectRef(self.dest_bucket, self.dest_prefix + key)

    def to_dict(self) -> dict:
        return {
            "source_bucket": self.source_bucket,
            "dest_bucket": self.dest_bucket,
            "keys": list(self.keys),
            "dest_prefix": self.dest_prefix,
            "part_size": self.part_size,
            "file_parallelism": self.file_parallelism,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransferRequest":
        try:
            return cls(
                source_bucket=data["source_bucket"],
                dest_bucket=data["dest_bucket"],
                keys=tuple(data["keys"]),
                dest_prefix=data.get("dest_prefix") or "",
                part_size=data.get("part_size") or DEFAULT_PART_SIZE,
                file_parallelism=int(data.get("file_parallelism") or 4),
            )
        except KeyError as e:
            raise TransferValidationError(f"Missing field {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            raise TransferValidationError(str(e)) from e


class FileStatus(str, Enum):
    PENDING = "PENDING"
    IN_PROGRESS = "IN_PROGRESS"
    SUCCESS = "SUCCESS"
    FAILED = "FAILED"

    @property
    def terminal(self) -> bool:
        return self in (FileStatus.SUCCESS, FileStatus.FAILED)


@dataclass
class FileTask:
    """Transfer status of one file.

    `duration` is set exactly when the task is terminal, `error` exactly when it FAILED.
    """

    key: str
    size: Optional[int] = None
    status: FileStatus = FileStatus.PENDING
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    duration: Optional[float] = None
    attempts: int = 0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "size": self.size,
            "status": self.status.value,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "duration": self.duration,
            "attempts": self.attempts,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FileTask":
        return cls(
            key=data["key"],
            size=data.get("size"),
            status=FileStatus(data.get("status", FileStatus.PENDING.value)),
            started_at=data.get("started_at"),
            finished_at=data.get("finished_at"),
            duration=data.get("duration"),
            attempts=data.get("attempts", 0),
            error=data.get("error"),
        )


@dataclass
class TransferStatusSnapshot:
    workflow_id: str
    tasks: list[FileTask] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    bytes_total: int = 0
    bytes_done: int = 0
    elapsed: float = 0.0
    overall_rate: float = 0.0
    complete: bool = True

    @property
    def failed(self) -> list[FileTask]:
        return [task for task in self.tasks if task.status is FileStatus.FAILED]

    @property
    def succeeded(self) -> list[FileTask]:
        return [task for task in self.tasks if task.status is FileStatus.SUCCESS]

    def to_dict(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "tasks": [task.to_dict() for task in self.tasks],
            "counts": dict(self.counts),
            "bytes_total": self.bytes_total,
            "bytes_done": self.bytes_done,
            "elapsed": self.elapsed,
            "overall_rate": self.overall_rate,
            "complete": self.complete,
            # the same figures in binary and decimal units
            "units": {
                "bytes_total_gib": self.bytes_total / GiB,
                "bytes_total_gb": self.bytes_total / GB,
                "bytes_done_gib": self.bytes_done / GiB,
                "bytes_done_gb": self.bytes_done / GB,
                "rate_gib_s": self.overall_rate / GiB,
                "rate_gb_s": self.overall_rate / GB,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TransferStatusSnapshot":
        return cls(
            workflow_id=data["workflow_id"],
            tasks=[FileTask.from_dict(task) for task in data.get("tasks", [])],
            counts=dict(data.get("counts", {})),
            bytes_total=data.get("bytes_total", 0),
            bytes_done=data.get("bytes_done", 0),
            elapsed=data.get("elapsed", 0.0),
            overall_rate=data.get("overall_rate", 0.0),
            complete=data.get("complete", False),
        )


def aggregate_status(
    tasks: Iterable[FileTask],
    started_at: float,
    workflow_id: str = "",
    now: float = None,
) -> TransferStatusSnapshot:
    """Summarize file tasks into a snapshot.

    Args:
        tasks: the per-file tasks, in request order.

        started_at: when the transfer started (epoch seconds).

        workflow_id: id of the transfer.

        now: the current time; defaults to the wall clock. Once every task is terminal, the elapsed time ends at the last finish instead.

    Returns:
        the snapshot, with `overall_rate = bytes_done / elapsed` (0 when nothing has elapsed).
    """
    tasks = list(tasks)
    counts = {status.name.lower(): 0 for status in FileStatus}
    for task in tasks:
        counts[task.status.name.lower()] += 1
    complete = counts["pending"] == 0 and counts["in_progress"] == 0

    finishes = [task.finished_at for task in tasks if task.finished_at is not None]
    if complete and finishes:
        end = max(finishes)
    elif complete:
        end = started_at
    else:
        end = time.time() if now is None else now
    elapsed = max(end - started_at, 0.0)

    bytes_total = sum(task.size or 0 for task in tasks)
    bytes_done = sum(task.size or 0 for task in tasks if task.status is FileStatus.SUCCESS)
    return TransferStatusSnapshot(
        workflow_id=workflow_id,
        tasks=tasks,
        counts=counts,
        bytes_total=bytes_total,
        bytes_done=bytes_done,
        elapsed=elapsed,
        overall_rate=bytes_done / elapsed if elapsed > 0 else 0.0,
        complete=complete,
    )
