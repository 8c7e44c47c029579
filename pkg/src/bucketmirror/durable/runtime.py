"""A minimal durable-execution runtime: workflows, at-least-once steps, a persistent queue and persisted events.

Example usage:

    >>> runtime = DurableRuntime(SQLiteStore("mirror.db"), worker_id="worker-1")
    >>> runtime.register_queue("work_q", QueueConfig(concurrency=8, worker_concurrency=4))
    >>> @runtime.step("double")
    ... def double(ctx, payload):
    ...     return payload * 2
    >>> @runtime.workflow("batch")
    ... def batch(ctx, payload):
    ...     handles = [ctx.enqueue("work_q", "double", n) for n in payload]
    ...     return [h.get_result() for h in handles]
    >>> runtime.launch()
    >>> runtime.start_workflow("batch", [1, 2, 3]).get_result()
    [2, 4, 6]

A workflow function is re-executed from the top when it is recovered, so it must be deterministic in the steps it enqueues: the n-th `enqueue` of a workflow always maps to the same child workflow and step record, which is how completed steps are skipped after a crash.
"""

import os
import socket
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional

from loguru import logger

from bucketmirror.errors import (
    DurableError,
    UnknownWorkflowError,
    WorkflowConflictError,
    WorkflowFailedError,
    WorkflowInterrupted,
    WorkflowNotFoundError,
)
from bucketmirror.durable.records import (
    QueueConfig,
    QueueEntry,
    RetryPolicy,
    StepRecord,
    StepStatus,
    WorkflowRecord,
    WorkflowStatus,
    dumps,
    loads,
    now,
)
from bucketmirror.durable.store import DurableStore


def default_worker_id() -> str:
    return f"{socket.gethostname()}-{os.getpid()}"


def canonical_uuid(value: Any) -> str:
    """Canonical hyphenated form of a UUID; raises ValueError if `value` is not one."""
    return str(uuid.UUID(str(value)))


def always_retryable(error: BaseException) -> bool:
    return True


##############################################################################
# Handles and contexts
##############################################################################


class WorkflowHandle:
    """A reference to a workflow that can be polled from any thread or process."""

    def __init__(self, store: DurableStore, workflow_id: str):
        self.store = store
        self.workflow_id = workflow_id

    def get_record(self) -> WorkflowRecord:
        record = self.store.get_workflow(self.workflow_id)
        if record is None:
            raise WorkflowNotFoundError(self.workflow_id)
        return record

    def get_status(self) -> WorkflowStatus:
        return self.get_record().status

    def get_step(self) -> Optional[StepRecord]:
        """The step record of a child workflow (None for top-level workflows)."""
        steps = self.store.get_steps(self.workflow_id)
        return steps[0] if steps else None

    def get_result(self, timeout: float = None, poll_interval: float = 0.05) -> Any:
        """Block until the workflow is terminal and return its output.

        Raises:
            WorkflowFailedError: if the workflow finished in ERROR.

            TimeoutError: if `timeout` seconds pass first.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            record = self.get_record()
            if record.status is WorkflowStatus.SUCCESS:
                return record.result
            if record.status is WorkflowStatus.ERROR:
                raise WorkflowFailedError(self.workflow_id, record.error)
            if deadline is not None and time.monotonic() >= deadline:
                raise TimeoutError(
                    f"Workflow {self.workflow_id} still PENDING after {timeout}s"
                )
            time.sleep(poll_interval)

    def __repr__(self) -> str:
        return f"WorkflowHandle({self.workflow_id})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorkflowHandle) and other.workflow_id == self.workflow_id

    def __hash__(self) -> int:
        return hash(self.workflow_id)


class WorkflowContext:
    """Passed as first argument to every workflow function."""

    def __init__(self, runtime: "DurableRuntime", record: WorkflowRecord):
        self.runtime = runtime
        self.record = record
        self._next_seq = 0

    @property
    def workflow_id(self) -> str:
        return self.record.workflow_id

    @property
    def created_at(self) -> float:
        return self.record.created_at

    def enqueue(self, queue_name: str, step_name: str, payload: Any) -> WorkflowHandle:
        seq = self._next_seq
        self._next_seq += 1
        return self.runtime.enqueue(
            queue_name, step_name, payload, parent_id=self.workflow_id, step_seq=seq
        )

    def set_event(self, key: str, value: Any) -> int:
        self.runtime._check_alive()
        return self.runtime.set_event(self.workflow_id, key, value)

    def get_event(self, key: str) -> Any:
        return self.runtime.get_event(self.workflow_id, key)

    def sleep(self, seconds: float) -> None:
        """Sleep, raising WorkflowInterrupted if the runtime stops meanwhile."""
        if self.runtime._stopping.wait(seconds):
            raise WorkflowInterrupted(f"Workflow {self.workflow_id} interrupted")


@dataclass
class StepContext:
    """Passed as first argument to every step function."""

    runtime: "DurableRuntime"
    workflow_id: str
    step_seq: int
    name: str
    attempt: int

    @property
    def stopping(self) -> bool:
        return self.runtime._stopping.is_set()


@dataclass
class _RegisteredStep:
    name: str
    func: Callable[[StepContext, Any], Any]
    retry: RetryPolicy
    is_retryable: Callable[[BaseException], bool]


##############################################################################
# Runtime
##############################################################################


class DurableRuntime:
    """Executes registered workflows and queued steps for one worker.

    Several runtimes (in one process or several) may share a store; each must have a distinct `worker_id`. A runtime restarted with the worker id of a dead predecessor adopts that predecessor's work immediately at launch.
    """

    def __init__(
        self,
        store: DurableStore,
        worker_id: str = None,
        heartbeat_interval: float = 2.0,
        staleness: float = 10.0,
        poll_interval: float = 0.02,
        max_workflows: int = 32,
    ):
        """Initialize a runtime.

        Args:
            store: the durable store shared by all workers.

            worker_id: unique id of this worker, by default derived from host name and pid.

            heartbeat_interval: seconds between heartbeats on owned workflows and claims.

            staleness: claims and workflows without a heartbeat for this many seconds are recoverable by other workers.

            poll_interval: idle wait of queue workers between claim attempts.

            max_workflows: threads available to top-level workflows.
        """
        if staleness <= heartbeat_interval:
            raise ValueError(
                f"staleness ({staleness}s) must exceed heartbeat_interval ({heartbeat_interval}s)"
            )
        self.store = store
        self.worker_id = worker_id or default_worker_id()
        self.heartbeat_interval = heartbeat_interval
        self.staleness = staleness
        self.poll_interval = poll_interval
        self.unrecoverable: list[WorkflowRecord] = []
        self.log = logger.bind(worker_id=self.worker_id)

        self._workflows: dict[str, Callable[[WorkflowContext, Any], Any]] = {}
        self._steps: dict[str, _RegisteredStep] = {}
        self._queues: dict[str, QueueConfig] = {}

        self._executor = ThreadPoolExecutor(
            max_workers=max_workflows, thread_name_prefix="workflow"
        )
        self._threads: list[threading.Thread] = []
        self._active: set[str] = set()
        self._active_lock = threading.Lock()
        self._stopping = threading.Event()
        self._halted = False
        self._launched = False

    ##########################################################################
    # Registration
    ##########################################################################

    def workflow(self, name: str) -> Callable:
        """Decorator registering a workflow function `f(ctx, payload)`."""

        def register(func):
            self._workflows[name] = func
            return func

        return register

    def step(
        self,
        name: str,
        retry: RetryPolicy = None,
        is_retryable: Callable[[BaseException], bool] = always_retryable,
    ) -> Callable:
        """Decorator registering a step function `f(ctx, payload)`.

        Args:
            name: the step name used by `enqueue`.

            retry: backoff policy, by default `RetryPolicy()`.

            is_retryable: returns False for errors that must fail the step without further attempts.
        """

        def register(func):
            self._steps[name] = _RegisteredStep(
                name, func, retry or RetryPolicy(), is_retryable
            )
            return func

        return register

    def register_queue(self, name: str, config: QueueConfig) -> None:
        self._queues[name] = config

    ##########################################################################
    # Lifecycle
    ##########################################################################

    def launch(self, recover: bool = True) -> list[WorkflowHandle]:
        """Start heartbeats and queue workers, after recovering pending work.

        Returns:
            handles of the workflows recovered at startup.
        """
        if self._launched:
            return []
        self._launched = True
        recovered = self.recover_pending(include_own=True) if recover else []

        self._spawn(self._heartbeat_loop, "heartbeat")
        for queue_name, config in self._queues.items():
            for i in range(config.worker_concurrency):
                self._spawn(self._queue_loop, f"{queue_name}-{i}", queue_name)
        self.log.info(
            "Runtime launched with queues {}, {} workflows recovered",
            list(self._queues),
            len(recovered),
        )
        return recovered

    def _spawn(self, target: Callable, name: str, *args) -> None:
        thread = threading.Thread(target=target, args=args, name=name, daemon=True)
        thread.start()
        self._threads.append(thread)

    def shutdown(self, wait: bool = True) -> None:
        """Stop gracefully. Running workflows stay PENDING and are recovered by the next launch."""
        self._stopping.set()
        if wait:
            for thread in self._threads:
                thread.join()
        self._executor.shutdown(wait=wait, cancel_futures=True)
        self.log.info("Runtime stopped")

    def halt(self) -> None:
        """Stop as if the process had died: nothing further is recorded by this runtime's threads."""
        self._halted = True
        self.shutdown(wait=False)

    def _check_alive(self) -> None:
        if self._halted:
            raise WorkflowInterrupted("runtime halted")

    ##########################################################################
    # Workflows
    ##########################################################################

    def start_workflow(
        self, name: str, payload: Any, workflow_id: str = None
    ) -> WorkflowHandle:
        """Persist a PENDING workflow and execute it asynchronously.

        Starting a workflow id that exists with an identical input returns a handle to the existing workflow without executing anything.

        Raises:
            UnknownWorkflowError: no workflow registered under `name`.

            WorkflowConflictError: `workflow_id` exists with a different name or input.
        """
        if name not in self._workflows:
            raise UnknownWorkflowError(name)
        workflow_id = canonical_uuid(workflow_id) if workflow_id else str(uuid.uuid4())
        record = WorkflowRecord(
            workflow_id=workflow_id,
            name=name,
            input=dumps(payload),
            executor_id=self.worker_id,
            heartbeat_at=now(),
        )
        stored, inserted = self.store.insert_workflow(record)
        if not inserted:
            if (stored.name, stored.input) != (record.name, record.input):
                raise WorkflowConflictError(workflow_id)
            return WorkflowHandle(self.store, workflow_id)
        self.log.bind(workflow_id=workflow_id).info("Started workflow {}", name)
        self._submit(stored)
        return WorkflowHandle(self.store, workflow_id)

    def retrieve_workflow(self, workflow_id: str) -> WorkflowHandle:
        if self.store.get_workflow(workflow_id) is None:
            raise WorkflowNotFoundError(workflow_id)
        return WorkflowHandle(self.store, workflow_id)

    def _submit(self, record: WorkflowRecord) -> Optional[WorkflowHandle]:
        with self._active_lock:
            if record.workflow_id in self._active:
                return None
            self._active.add(record.workflow_id)
        self._executor.submit(self._execute_workflow, record)
        return WorkflowHandle(self.store, record.workflow_id)

    def _execute_workflow(self, record: WorkflowRecord) -> None:
        log = self.log.bind(workflow_id=record.workflow_id)
        ctx = WorkflowContext(self, record)
        try:
            output = self._workflows[record.name](ctx, record.payload)
        except WorkflowInterrupted:
            log.info("Workflow {} interrupted, left PENDING", record.name)
        except Exception as e:
            if not self._halted:
                log.exception("Workflow {} failed", record.name)
                self.store.finish_workflow(
                    record.workflow_id,
                    WorkflowStatus.ERROR,
                    error=f"{type(e).__name__}: {e}",
                )
        else:
            if not self._halted:
                self.store.finish_workflow(
                    record.workflow_id, WorkflowStatus.SUCCESS, output=dumps(output)
                )
                log.info("Workflow {} succeeded", record.name)
        finally:
            with self._active_lock:
                self._active.discard(record.workflow_id)

    ##########################################################################
    # Queue
    ##########################################################################

    def enqueue(
        self,
        queue_name: str,
        step_name: str,
        payload: Any,
        parent_id: str = None,
        step_seq: int = None,
    ) -> WorkflowHandle:
        """Persist a child workflow wrapping one step, claimable from `queue_name`.

        When `parent_id` is given, the child id is derived from `(parent_id, step_seq)`, so a re-executed parent maps each enqueue to the same child.
        """
        if queue_name not in self._queues:
            raise KeyError(f"Queue '{queue_name}' is not registered.")
        if step_name not in self._steps:
            raise UnknownWorkflowError(step_name)
        if parent_id is not None:
            if step_seq is None:
                raise ValueError("step_seq is required together with parent_id")
            child_id = str(uuid.uuid5(uuid.UUID(parent_id), str(step_seq)))
        else:
            child_id, step_seq = str(uuid.uuid4()), 0
        child = WorkflowRecord(
            workflow_id=child_id,
            name=step_name,
            input=dumps(payload),
            parent_id=parent_id,
            queue_name=queue_name,
        )
        self.store.enqueue_child(child, StepRecord(child_id, step_seq, step_name))
        return WorkflowHandle(self.store, child_id)

    def claim_next(self, worker_id: str = None) -> Optional[QueueEntry]:
        """Claim the oldest unclaimed entry of any registered queue whose limits allow it."""
        worker_id = worker_id or self.worker_id
        for queue_name, config in self._queues.items():
            entry = self.store.claim_next(worker_id, queue_name, config)
            if entry is not None:
                return entry
        return None

    def _queue_loop(self, queue_name: str) -> None:
        config = self._queues[queue_name]
        while not self._stopping.is_set():
            try:
                entry = self.store.claim_next(self.worker_id, queue_name, config)
            except DurableError:
                self.log.exception("Claim on {} failed", queue_name)
                entry = None
            if entry is None:
                self._stopping.wait(self.poll_interval)
                continue
            self.execute_entry(entry)

    def execute_entry(self, entry: QueueEntry) -> None:
        """Run the step of a claimed entry. Step failures are recorded, never raised.

        A step with no registered body is recorded as ERROR. On any other unexpected error (e.g. a StorageError while recording the outcome) the claim is released, so the entry is claimed and executed again.
        """
        try:
            child = self.store.get_workflow(entry.workflow_id)
            registered = self._steps.get(child.name)
            if registered is None:
                message = f"No step registered as '{child.name}' on worker {self.worker_id}"
                self.log.error(message)
                step = self.store.get_steps(child.workflow_id)[0]
                self.store.finish_step(child.workflow_id, step.step_seq, StepStatus.ERROR, error=message)
                return
            step = self.store.get_steps(child.workflow_id)[0]
            payload = child.payload
            self.run_step(
                step,
                lambda ctx: registered.func(ctx, payload),
                registered.retry,
                registered.is_retryable,
            )
        except (WorkflowFailedError, WorkflowInterrupted):
            pass
        except Exception:
            self.log.exception("Unexpected error running entry {}, releasing its claim", entry.workflow_id)
            if self._halted:
                return
            try:
                self.store.release_claim(entry.workflow_id, self.worker_id)
            except DurableError:
                self.log.exception("Cannot release the claim on {}", entry.workflow_id)
            self._stopping.wait(self.poll_interval)

    def run_step(
        self,
        step: StepRecord,
        body: Callable[[StepContext], Any],
        policy: RetryPolicy = None,
        is_retryable: Callable[[BaseException], bool] = always_retryable,
    ) -> Any:
        """Execute a step body at least once, and never again after its success is recorded.

        Args:
            step: the step record (as persisted by `enqueue`).

            body: the step body, called with a StepContext.

            policy: retry policy, by default `RetryPolicy()`.

            is_retryable: classifies body errors; non-retryable errors fail the step at once.

        Returns:
            the recorded output of the step.

        Raises:
            WorkflowFailedError: the step ended in ERROR (recorded before raising).
        """
        policy = policy or RetryPolicy()
        log = self.log.bind(workflow_id=step.workflow_id, step=step.name)
        current = self.store.get_step(step.workflow_id, step.step_seq)
        if current is None:
            raise WorkflowNotFoundError(step.workflow_id)
        if current.status is StepStatus.SUCCESS:
            # release a claim left behind, without running the body
            self.store.finish_step(
                step.workflow_id, step.step_seq, StepStatus.SUCCESS, output=current.output
            )
            return current.result
        if current.status is StepStatus.ERROR:
            self.store.finish_step(
                step.workflow_id, step.step_seq, StepStatus.ERROR, error=current.error
            )
            raise WorkflowFailedError(step.workflow_id, current.error)

        new_execution = True
        while True:
            self._check_alive()
            record = self.store.start_attempt(step.workflow_id, step.step_seq, new_execution)
            if record.status is StepStatus.SUCCESS:
                return record.result
            new_execution = False
            ctx = StepContext(self, step.workflow_id, step.step_seq, step.name, record.attempts)
            try:
                output = body(ctx)
            except WorkflowInterrupted:
                raise
            except Exception as e:
                self._check_alive()
                message = f"{type(e).__name__}: {e}"
                retryable = is_retryable(e)
                if not retryable or record.attempts >= policy.max_attempts:
                    self.store.finish_step(
                        step.workflow_id, step.step_seq, StepStatus.ERROR, error=message
                    )
                    log.warning(
                        "Step failed after {} attempt(s) ({}): {}",
                        record.attempts,
                        "retryable" if retryable else "permanent",
                        message,
                    )
                    raise WorkflowFailedError(step.workflow_id, message) from e
                delay = policy.delay(record.attempts)
                log.info(
                    "Attempt {} failed ({}), retrying in {:.3f}s", record.attempts, message, delay
                )
                if self._stopping.wait(delay):
                    raise WorkflowInterrupted(f"Step {step.workflow_id} interrupted")
            else:
                self._check_alive()
                self.store.finish_step(
                    step.workflow_id, step.step_seq, StepStatus.SUCCESS, output=dumps(output)
                )
                return loads(dumps(output))

    ##########################################################################
    # Events
    ##########################################################################

    def set_event(self, workflow_id: str, key: str, value: Any) -> int:
        """Durably upsert an event value; returns its new version."""
        return self.store.set_event(workflow_id, key, dumps(value))

    def get_event(self, workflow_id: str, key: str) -> Any:
        """Latest value of an event, or None if it was never set."""
        record = self.store.get_event(workflow_id, key)
        return None if record is None else record.payload

    ##########################################################################
    # Heartbeats and recovery
    ##########################################################################

    def _heartbeat_loop(self) -> None:
        last_recovery = time.monotonic()
        while not self._stopping.wait(self.heartbeat_interval):
            if self._halted:
                return
            try:
                self.store.heartbeat(self.worker_id)
                if time.monotonic() - last_recovery >= self.staleness:
                    last_recovery = time.monotonic()
                    self.recover_pending()
            except DurableError:
                self.log.exception("Heartbeat failed")

    def recover_pending(
        self, worker_id: str = None, include_own: bool = False
    ) -> list[WorkflowHandle]:
        """Adopt workflows and queue claims whose owner stopped heartbeating.

        Stale queue claims are released, so their steps are claimed and executed again (steps already SUCCESS are skipped by `run_step`). Stale top-level workflows are adopted by this worker and re-executed.

        Args:
            worker_id: the adopting worker, by default this runtime's.

            include_own: also adopt work still attributed to `worker_id` itself, i.e. left by a previous life of this worker.

        Returns:
            handles of the adopted workflows and of the released child workflows. Adopted workflows whose name is not registered here are appended to `self.unrecoverable` instead.
        """
        worker_id = worker_id or self.worker_id
        cutoff = now() - self.staleness
        released = self.store.release_stale_claims(worker_id, cutoff, include_own)
        adopted = self.store.adopt_stale_workflows(worker_id, cutoff, include_own)

        handles = []
        for record in adopted:
            if record.name not in self._workflows:
                self.unrecoverable.append(record)
                self.log.warning(
                    "Cannot recover workflow {}: '{}' is not registered",
                    record.workflow_id,
                    record.name,
                )
                continue
            handle = self._submit(record)
            if handle is not None:
                handles.append(handle)
        handles.extend(WorkflowHandle(self.store, entry.workflow_id) for entry in released)
        if handles:
            self.log.info(
                "Recovered {} workflow(s) and released {} stale claim(s)",
                len(handles) - len(released),
                len(released),
            )
        return handles
