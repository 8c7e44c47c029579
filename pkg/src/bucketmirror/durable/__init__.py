"""A minimal durable-execution kernel backed by an embedded relational store.

The `bucketmirror.durable.records` submodule defines the four persisted record types (workflows, steps, queue entries, events) together with the queue and retry configuration types.

The `bucketmirror.durable.store` submodule defines the storage interface and its SQLite implementation. All atomicity (exclusive claims, step completion, event versioning) is delegated to the store's transactions.

The `bucketmirror.durable.runtime` submodule executes registered workflows and queued steps, heartbeats the work it owns, and recovers work whose owner died.
"""

from bucketmirror.durable.records import (
    EventRecord,
    QueueConfig,
    QueueEntry,
    RetryPolicy,
    StepRecord,
    StepStatus,
    WorkflowRecord,
    WorkflowStatus,
)
from bucketmirror.durable.runtime import (
    DurableRuntime,
    StepContext,
    WorkflowContext,
    WorkflowHandle,
)
from bucketmirror.durable.store import DurableStore, SQLiteStore
