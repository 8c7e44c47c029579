"""Bucket and object abstractions for server-side mirroring.

The `bucketmirror.objects.base` submodule contains the object store interface, the reference types (objects, parts, multipart uploads) and the part arithmetic.

The `bucketmirror.objects.faults` submodule describes deterministic fault plans: intermittent errors, permission denials and per-request latency.

The `bucketmirror.objects.simulated` submodule implements a persistent, fault-injecting store used for desk-scale runs and crash scenarios; `bucketmirror.objects.wire` implements the same interface against any S3-compatible endpoint.
"""

from bucketmirror.objects.base import (
    DEFAULT_PART_SIZE,
    GiB,
    KiB,
    MAX_PART_SIZE,
    MIN_PART_SIZE,
    MiB,
    MultipartUpload,
    ObjectMeta,
    ObjectRef,
    ObjectStore,
    PartSpec,
    StoreMetrics,
    TiB,
    UploadState,
    compute_parts,
    parse_size,
)
from bucketmirror.objects.faults import FaultInjector, FaultPlan
from bucketmirror.objects.simulated import SimulatedObjectStore
