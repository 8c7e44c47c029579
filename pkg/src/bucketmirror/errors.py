"""Exception hierarchy shared by every bucketmirror subpackage.

Object store errors fall into exactly two classes. `RetryableStoreError` covers intermittent failures that are expected to resolve on retry (5xx-like, throttling, timeouts). `PermanentStoreError` covers failures that need a human: missing permissions, missing objects, invalid ranges.
"""


class MirrorError(Exception):
    """Base class for all bucketmirror errors."""


class ConfigError(MirrorError, ValueError):
    """A configuration value is missing or inconsistent."""


##############################################################################
# Durable execution
##############################################################################


class DurableError(MirrorError):
    """Base class for errors raised by the durable execution runtime."""


class UnknownWorkflowError(DurableError, KeyError):
    """No workflow or step function is registered under the requested name."""

    def __init__(self, name: str):
        super().__init__(f"No workflow or step registered under the name '{name}'.")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class WorkflowConflictError(DurableError):
    """A workflow id was reused with a different input."""

    def __init__(self, workflow_id: str):
        super().__init__(
            f"Workflow {workflow_id} already exists with a different input."
        )
        self.workflow_id = workflow_id


class WorkflowNotFoundError(DurableError, KeyError):
    def __init__(self, workflow_id: str):
        super().__init__(f"Workflow {workflow_id} does not exist.")
        self.workflow_id = workflow_id

    def __str__(self) -> str:
        return self.args[0]


class WorkflowFailedError(DurableError):
    """Raised by a handle when the workflow it tracks finished in ERROR."""

    def __init__(self, workflow_id: str, error: str):
        super().__init__(f"Workflow {workflow_id} failed: {error}")
        self.workflow_id = workflow_id
        self.error = error


class WorkflowInterrupted(DurableError):
    """The runtime is shutting down; the workflow stays PENDING for recovery."""


class StorageError(DurableError):
    """The durable store could not complete an operation."""


##############################################################################
# Object store
##############################################################################


class ObjectStoreError(MirrorError):
    """Base class for object store errors.

    Attributes:
        key: the object key the request was about, if any.
    """

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


class RetryableStoreError(ObjectStoreError):
    """An error that is expected to resolve on retry."""


class IntermittentError(RetryableStoreError):
    pass


class ThrottledError(RetryableStoreError):
    pass


class PermanentStoreError(ObjectStoreError):
    """An error that retrying cannot resolve."""


class PermissionDenied(PermanentStoreError):
    pass


class NotFound(PermanentStoreError):
    pass


class NoSuchBucket(PermanentStoreError):
    pass


class NoSuchUpload(PermanentStoreError):
    pass


class RangeInvalid(PermanentStoreError):
    pass


class MissingPart(PermanentStoreError):
    pass


##############################################################################
# Transfer engine, harness
##############################################################################


class ThrottleError(MirrorError, RuntimeError):
    """A throttle permit was released that was never acquired (or released twice)."""


class TransferValidationError(MirrorError, ValueError):
    """A transfer request is malformed."""


class ScenarioTimeout(MirrorError, TimeoutError):
    """A harness scenario did not converge in time."""
