"""Durable, parallel mirroring of object batches.

The `bucketmirror.transfer.tasks` submodule defines transfer requests, per-file tasks and the aggregate status snapshot.

The `bucketmirror.transfer.throttle` submodule partitions the global in-flight request budget between workers.

The `bucketmirror.transfer.engine` submodule registers the `transfer_job` workflow and the `s3_transfer_file` step with a durable runtime.
"""

from bucketmirror.transfer.engine import (
    TASKS_EVENT,
    TRANSFER_QUEUE,
    TRANSFER_STEP,
    TRANSFER_WORKFLOW,
    ErrorClass,
    TransferEngine,
    classify_error,
    cleanup_leaks,
    read_status,
    recommended_parallelism,
)
from bucketmirror.transfer.tasks import (
    FileStatus,
    FileTask,
    TransferRequest,
    TransferStatusSnapshot,
    aggregate_status,
)
from bucketmirror.transfer.throttle import Permit, Throttle, ThrottleConfig
