"""The transfer workflow and the per-file copy step.

`transfer_job` enqueues one `s3_transfer_file` step per key and then polls the durable step records, publishing the per-file task list as the "tasks" event until every file is terminal. Steps never write shared status: everything the poller reports comes from step records.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Any, Optional

from loguru import logger

from bucketmirror.durable import (
    DurableRuntime,
    DurableStore,
    QueueConfig,
    RetryPolicy,
    StepContext,
    StepRecord,
    StepStatus,
    WorkflowContext,
    WorkflowHandle,
    WorkflowStatus,
)
from bucketmirror.errors import (
    PermanentStoreError,
    WorkflowInterrupted,
    WorkflowNotFoundError,
)
from bucketmirror.objects.base import (
    MAX_PART_SIZE,
    MIN_PART_SIZE,
    MultipartUpload,
    ObjectRef,
    ObjectStore,
    PartSpec,
    compute_parts,
)
from bucketmirror.transfer.tasks import (
    FileStatus,
    FileTask,
    TransferRequest,
    TransferStatusSnapshot,
    aggregate_status,
)
from bucketmirror.transfer.throttle import Throttle

TRANSFER_WORKFLOW = "transfer_job"
TRANSFER_STEP = "s3_transfer_file"
TRANSFER_QUEUE = "transfer_q"
TASKS_EVENT = "tasks"

# sustained throughput of one 8-16 MB byte-range request
PER_REQUEST_RATE = 85 * 10**6


class ErrorClass(str, Enum):
    RETRYABLE = "RETRYABLE"
    PERMANENT = "PERMANENT"


def classify_error(error: BaseException) -> ErrorClass:
    """Permission, not-found and invalid-range errors are permanent; everything else, including unrecognized errors, is retried."""
    if isinstance(error, PermanentStoreError):
        return ErrorClass.PERMANENT
    return ErrorClass.RETRYABLE


def is_retryable(error: BaseException) -> bool:
    return classify_error(error) is ErrorClass.RETRYABLE


def recommended_parallelism(target_rate: float, per_request_rate: float = PER_REQUEST_RATE) -> int:
    """Concurrent range requests needed to sustain `target_rate` bytes per second."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    return max(1, math.ceil(target_rate / per_request_rate))


def task_from_step(key: str, step: Optional[StepRecord]) -> FileTask:
    """The FileTask of `key` as recorded by its step (PENDING if not enqueued yet)."""
    if step is None or step.status is StepStatus.PENDING:
        return FileTask(key=key)
    if step.status is StepStatus.RUNNING:
        return FileTask(
            key=key,
            status=FileStatus.IN_PROGRESS,
            started_at=step.started_at,
            attempts=step.attempts,
        )
    if step.status is StepStatus.SUCCESS:
        task = FileTask.from_dict(step.result)
        task.attempts = step.attempts
        # the span covers every attempt, from the first head to the completed upload
        if step.started_at is not None and task.finished_at is not None:
            task.started_at = min(step.started_at, task.started_at or step.started_at)
            task.duration = round(task.finished_at - task.started_at, 3)
        return task
    duration = None
    if step.started_at is not None and step.finished_at is not None:
        duration = round(step.finished_at - step.started_at, 3)
    return FileTask(
        key=key,
        status=FileStatus.FAILED,
        started_at=step.started_at,
        finished_at=step.finished_at,
        duration=duration if duration is not None else 0.0,
        attempts=step.attempts,
        error=step.error or "unknown error",
    )


def collect_tasks(store: DurableStore, workflow_id: str, keys: list[str]) -> list[FileTask]:
    steps = {step.step_seq: step for _, step in store.list_children(workflow_id)}
    return [task_from_step(key, steps.get(seq)) for seq, key in enumerate(keys)]


def read_status(store: DurableStore, workflow_id: str) -> TransferStatusSnapshot:
    """The latest published snapshot of a transfer, read from the durable store.

    Before the first snapshot is published, an all-PENDING snapshot is built from the stored request.

    Raises:
        WorkflowNotFoundError: no transfer with this id.
    """
    record = store.get_workflow(workflow_id)
    if record is None or record.name != TRANSFER_WORKFLOW:
        raise WorkflowNotFoundError(workflow_id)
    event = store.get_event(workflow_id, TASKS_EVENT)
    if event is not None:
        return TransferStatusSnapshot.from_dict(event.payload)
    request = TransferRequest.from_dict(record.payload)
    return aggregate_status(
        [FileTask(key=key) for key in request.keys],
        record.created_at,
        workflow_id=workflow_id,
    )


def cleanup_leaks(store: ObjectStore, bucket: str) -> int:
    """Abort every OPEN multipart upload in `bucket`. Returns how many were aborted.

    No transfer may be writing to `bucket` meanwhile: its open uploads would be aborted too.
    """
    uploads = store.list_incomplete_uploads(bucket)
    for upload in uploads:
        store.abort_multipart(upload)
        logger.bind(key=upload.target.key).info("Aborted incomplete upload {}", upload.upload_id)
    logger.info("Cleaned up {} incomplete upload(s) in bucket {}", len(uploads), bucket)
    return len(uploads)


class TransferEngine:
    """Registers the transfer workflow, its step and its queue with a durable runtime.

    Usage:
        engine = TransferEngine(runtime, store, Throttle(ThrottleConfig(64)))
        runtime.launch()
        handle = engine.start_transfer(TransferRequest("src", "dst", ["a", "b"]))
        engine.status(handle.workflow_id)
    """

    def __init__(
        self,
        runtime: DurableRuntime,
        store: ObjectStore,
        throttle: Throttle = None,
        queue: QueueConfig = None,
        retry: RetryPolicy = None,
        poll_interval: float = 1.0,
        min_part_size: int = MIN_PART_SIZE,
        max_part_size: int = MAX_PART_SIZE,
    ):
        self.runtime = runtime
        self.store = store
        self.throttle = throttle or Throttle()
        self.queue = queue or QueueConfig(concurrency=16, worker_concurrency=16)
        self.retry = retry or RetryPolicy()
        self.poll_interval = poll_interval
        self.min_part_size = min_part_size
        self.max_part_size = max_part_size

        runtime.register_queue(TRANSFER_QUEUE, self.queue)
        runtime.workflow(TRANSFER_WORKFLOW)(self.transfer_job)
        runtime.step(TRANSFER_STEP, retry=self.retry, is_retryable=is_retryable)(
            self.s3_transfer_file
        )

    def start_transfer(self, request: TransferRequest, workflow_id: str = None) -> WorkflowHandle:
        request.validate(self.min_part_size, self.max_part_size)
        return self.runtime.start_workflow(TRANSFER_WORKFLOW, request.to_dict(), workflow_id)

    def status(self, workflow_id: str) -> TransferStatusSnapshot:
        return read_status(self.runtime.store, workflow_id)

    def pending_transfers(self) -> list[str]:
        """Ids of transfers not yet complete, oldest first."""
        return [
            record.workflow_id
            for record in self.runtime.store.list_workflows(WorkflowStatus.PENDING, top_level_only=True)
            if record.name == TRANSFER_WORKFLOW
        ]

    ##########################################################################
    # Workflow
    ##########################################################################

    def transfer_job(self, ctx: WorkflowContext, payload: dict) -> dict:
        request = TransferRequest.from_dict(payload)
        log = logger.bind(workflow_id=ctx.workflow_id)
        log.info(
            "Transfer of {} file(s) from {} to {}",
            len(request.keys),
            request.source_bucket,
            request.dest_bucket,
        )
        for key in request.keys:
            ctx.enqueue(
                TRANSFER_QUEUE,
                TRANSFER_STEP,
                {
                    "source": request.source(key).to_dict(),
                    "dest": request.dest(key).to_dict(),
                    "part_size": request.part_size,
                    "file_parallelism": request.file_parallelism,
                },
            )

        while True:
            tasks = collect_tasks(self.runtime.store, ctx.workflow_id, list(request.keys))
            snapshot = aggregate_status(tasks, ctx.created_at, workflow_id=ctx.workflow_id)
            ctx.set_event(TASKS_EVENT, snapshot.to_dict())
            if snapshot.complete:
                log.info(
                    "Transfer complete: {} succeeded, {} failed, {:.1f} MiB/s",
                    snapshot.counts["success"],
                    snapshot.counts["failed"],
                    snapshot.overall_rate / 2**20,
                )
                return snapshot.to_dict()
            ctx.sleep(self.poll_interval)

    ##########################################################################
    # Step
    ##########################################################################

    def s3_transfer_file(self, ctx: StepContext, payload: dict) -> dict:
        source = ObjectRef.from_dict(payload["source"])
        dest = ObjectRef.from_dict(payload["dest"])
        log = logger.bind(workflow_id=ctx.workflow_id, key=source.key)
        started = time.time()

        meta = self.store.head_object(source)
        if meta.size == 0:
            with self.throttle.permit():
                self.store.copy_object(source, dest)
        else:
            parts = compute_parts(meta.size, payload["part_size"])
            upload = self.store.create_multipart(dest)
            etags = self._copy_parts(ctx, upload, source, parts, payload["file_parallelism"])
            self._check_stopping(ctx)
            self.store.complete_multipart(upload, etags)

        finished = time.time()
        log.debug("Copied {} bytes in {:.3f}s (attempt {})", meta.size, finished - started, ctx.attempt)
        return FileTask(
            key=source.key,
            size=meta.size,
            status=FileStatus.SUCCESS,
            started_at=started,
            finished_at=finished,
            duration=round(finished - started, 3),
            attempts=ctx.attempt,
        ).to_dict()

    def _copy_parts(
        self,
        ctx: StepContext,
        upload: MultipartUpload,
        source: ObjectRef,
        parts: list[PartSpec],
        parallelism: int,
    ) -> list[str]:
        def copy_part(part: PartSpec) -> str:
            self._check_stopping(ctx)
            with self.throttle.permit():
                return self.store.upload_part_copy(upload, source, part)

        with ThreadPoolExecutor(
            max_workers=min(parallelism, len(parts)), thread_name_prefix="part"
        ) as pool:
            futures = [pool.submit(copy_part, part) for part in parts]
            try:
                return [future.result() for future in futures]
            except BaseException:
                for future in futures:
                    future.cancel()
                raise

    @staticmethod
    def _check_stopping(ctx: StepContext) -> None:
        if ctx.stopping:
            raise WorkflowInterrupted(f"Step {ctx.workflow_id} interrupted")
