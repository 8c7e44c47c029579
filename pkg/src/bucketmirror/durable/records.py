"""Record types persisted by the durable store.

Payloads (workflow inputs, step outputs, event values) are kept as canonical JSON strings, so two inputs are equal exactly when their serialized forms are equal.
"""

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


def dumps(payload: Any) -> str:
    """Serialize a payload to canonical JSON."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def loads(text: Optional[str]) -> Any:
    if text is None:
        return None
    return json.loads(text)


def now() -> float:
    return time.time()


class WorkflowStatus(str, Enum):
    PENDING = "PENDING"
    SUCCESS = "SUCCESS"
    ERROR = "ERROR"

    @property
    def terminal(self) -> bool:
        return self is not WorkflowStatus.PENDING


class StepStatus(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    SUCCESS = "SUCCESS"
    ERROR = "ERROR"

    @property
    def terminal(self) -> bool:
        return self in (StepStatus.SUCCESS, StepStatus.ERROR)


@dataclass
class WorkflowRecord:
    """Durable state of one workflow.

    Top-level workflows (started with `start_workflow`) have no `queue_name`; they are owned by the worker named in `executor_id` for as long as its heartbeat is fresh. Child workflows are created by `enqueue` and wrap exactly one step; they are owned through their queue entry.
    """

    workflow_id: str
    name: str
    input: str
    status: WorkflowStatus = WorkflowStatus.PENDING
    created_at: float = field(default_factory=now)
    updated_at: float = field(default_factory=now)
    parent_id: Optional[str] = None
    queue_name: Optional[str] = None
    executor_id: Optional[str] = None
    heartbeat_at: Optional[float] = None
    output: Optional[str] = None
    error: Optional[str] = None

    @property
    def payload(self) -> Any:
        return loads(self.input)

    @property
    def result(self) -> Any:
        return loads(self.output)


@dataclass
class StepRecord:
    """Outcome of one step.

    Once `status` is SUCCESS the output is immutable and the step body never runs again. `attempts` counts attempts within the current execution life, `executions` counts lives (a step that was RUNNING when its worker died is executed again after recovery).
    """

    workflow_id: str
    step_seq: int
    name: str
    status: StepStatus = StepStatus.PENDING
    output: Optional[str] = None
    error: Optional[str] = None
    attempts: int = 0
    executions: int = 0
    attempt_times: list[float] = field(default_factory=list)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    @property
    def result(self) -> Any:
        return loads(self.output)

    def retry_delays(self) -> list[float]:
        """Observed gaps between consecutive attempt start times."""
        times = self.attempt_times
        return [later - earlier for earlier, later in zip(times, times[1:])]


@dataclass
class QueueEntry:
    queue_name: str
    workflow_id: str
    seq: int
    enqueued_at: float = field(default_factory=now)
    claimed_by: Optional[str] = None
    claimed_at: Optional[float] = None
    heartbeat_at: Optional[float] = None

    @property
    def claimed(self) -> bool:
        return self.claimed_by is not None


@dataclass(frozen=True)
class QueueConfig:
    """Concurrency limits of a queue.

    Attributes:
        concurrency: global maximum of claimed entries, across all workers.

        worker_concurrency: maximum of entries claimed by a single worker.
    """

    concurrency: int
    worker_concurrency: int

    def __post_init__(self):
        if self.concurrency < 1 or self.worker_concurrency < 1:
            raise ValueError(
                f"Queue concurrency limits must be positive. Received: concurrency={self.concurrency}, worker_concurrency={self.worker_concurrency}"
            )
        if self.worker_concurrency > self.concurrency:
            raise ValueError(
                f"worker_concurrency ({self.worker_concurrency}) must not exceed concurrency ({self.concurrency})."
            )


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff policy for steps.

    The delay before attempt k+1 (after attempt k failed) is `min(base_delay * backoff_factor**(k-1), max_delay)`.
    """

    max_attempts: int = 3
    base_delay: float = 0.5
    backoff_factor: float = 2.0
    max_delay: float = 10.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be positive, got {self.max_attempts}")
        if self.backoff_factor <= 1:
            raise ValueError(
                f"backoff_factor must be greater than 1, got {self.backoff_factor}"
            )
        if self.base_delay < 0 or self.max_delay < self.base_delay:
            raise ValueError(
                f"Expected 0 <= base_delay <= max_delay, got base_delay={self.base_delay}, max_delay={self.max_delay}"
            )

    def delay(self, attempt: int) -> float:
        """Seconds to wait after failed attempt number `attempt` (1-based)."""
        return min(self.base_delay * self.backoff_factor ** (attempt - 1), self.max_delay)

    def to_dict(self) -> dict:
        return {
            "max_attempts": self.max_attempts,
            "base_delay": self.base_delay,
            "backoff_factor": self.backoff_factor,
            "max_delay": self.max_delay,
        }


@dataclass
class EventRecord:
    workflow_id: str
    key: str
    value: str
    version: int
    updated_at: float = field(default_factory=now)

    @property
    def payload(self) -> Any:
        return loads(self.value)
