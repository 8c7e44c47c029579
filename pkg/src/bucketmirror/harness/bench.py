"""Throughput reports, published baselines and desk-scale benchmark runs."""

import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd
from loguru import logger
from tqdm import tqdm

from bucketmirror.durable import DurableRuntime, QueueConfig, RetryPolicy, SQLiteStore
from bucketmirror.errors import MirrorError
from bucketmirror.objects.base import MIN_PART_SIZE, GiB, TiB
from bucketmirror.objects.faults import FaultPlan
from bucketmirror.objects.simulated import SimulatedObjectStore
from bucketmirror.harness.dataset import DatasetSpec, content_hashes, dataset_hashes, generate_dataset
from bucketmirror.transfer.engine import TransferEngine
from bucketmirror.transfer.tasks import FileStatus, FileTask, TransferRequest, TransferStatusSnapshot
from bucketmirror.transfer.throttle import Throttle, ThrottleConfig

GB = 10**9

# reference batch: 448 files totaling 11.88 TiB
REFERENCE_FILES = 448
REFERENCE_BYTES = int(11.88 * TiB)


@dataclass(frozen=True)
class Baseline:
    method: str
    rate: float  # bytes per second


BASELINES = [
    Baseline("sync command, default settings", 0.2 * GiB),
    Baseline("managed transfer service, enhanced mode", 0.6 * GiB),
    Baseline("bucketmirror, single server", 4.1 * GiB),
    Baseline("bucketmirror, autoscaled workers", 24.9 * GiB),
]


def format_duration(seconds: float) -> str:
    if seconds >= 3600:
        return f"{seconds / 3600:.1f} h"
    if seconds >= 60:
        return f"{seconds / 60:.1f} min"
    return f"{seconds:.1f} s"


@dataclass
class BenchReport:
    """Outcome of a transfer run; `rate = bytes_total / duration`."""

    files: int
    bytes_total: int
    duration: float
    rate: float
    per_file: list[FileTask] = field(default_factory=list)
    max_inflight_observed: int = 0

    @property
    def rate_gib_s(self) -> float:
        return self.rate / GiB

    @property
    def rate_gb_s(self) -> float:
        return self.rate / GB

    @property
    def minutes(self) -> float:
        return self.duration / 60

    @property
    def hours(self) -> float:
        return self.duration / 3600

    def to_dict(self) -> dict:
        return {
            "files": self.files,
            "bytes_total": self.bytes_total,
            "bytes_total_gib": self.bytes_total / GiB,
            "bytes_total_gb": self.bytes_total / GB,
            "duration": self.duration,
            "rate": self.rate,
            "rate_gib_s": self.rate_gib_s,
            "rate_gb_s": self.rate_gb_s,
            "max_inflight_observed": self.max_inflight_observed,
            "per_file": [task.to_dict() for task in self.per_file],
        }

    def table(self) -> str:
        rows = [
            ("files", self.files),
            ("bytes", f"{self.bytes_total / GiB:.3f} GiB ({self.bytes_total / GB:.3f} GB)"),
            ("duration", format_duration(self.duration)),
            ("rate", f"{self.rate_gib_s:.3f} GiB/s ({self.rate_gb_s:.3f} GB/s)"),
            ("max in-flight writes", self.max_inflight_observed),
        ]
        return pd.DataFrame(rows, columns=["", "value"]).to_string(index=False)


def report_benchmark(
    bytes_total: int,
    duration: float = None,
    rate: float = None,
    per_file: list[FileTask] = None,
    max_inflight: int = 0,
    files: int = None,
) -> BenchReport:
    """Build a report from a byte count and either a duration or a rate.

    Raises:
        ValueError: unless exactly one of `duration` and `rate` is given and positive.
    """
    if (duration is None) == (rate is None):
        raise ValueError("Exactly one of duration and rate is required")
    if duration is not None:
        if duration <= 0:
            raise ValueError(f"duration must be positive, got {duration}")
        rate = bytes_total / duration
    else:
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        duration = bytes_total / rate
    per_file = per_file or []
    return BenchReport(
        files=files if files is not None else len(per_file),
        bytes_total=bytes_total,
        duration=duration,
        rate=rate,
        per_file=per_file,
        max_inflight_observed=max_inflight,
    )


def report_from_snapshot(snapshot: TransferStatusSnapshot, max_inflight: int = 0) -> BenchReport:
    """A report of a finished transfer, timed from the first file start to the last file finish."""
    done = [task for task in snapshot.tasks if task.status is FileStatus.SUCCESS]
    if not done:
        raise ValueError(f"Transfer {snapshot.workflow_id} has no successful file")
    started = min(task.started_at for task in done)
    finished = max(task.finished_at for task in done)
    return report_benchmark(
        sum(task.size for task in done),
        duration=max(finished - started, 1e-6),
        per_file=snapshot.tasks,
        max_inflight=max_inflight,
    )


def compare_to_baselines(
    report: BenchReport = None,
    bytes_total: int = REFERENCE_BYTES,
    baselines: Iterable[Baseline] = BASELINES,
) -> pd.DataFrame:
    """Transfer time of `bytes_total` at each baseline rate (and at the rate of `report`), with speedups over the slowest."""
    rows = [(b.method, b.rate) for b in baselines]
    if report is not None:
        rows.append(("this run", report.rate))
    slowest = min(rate for _, rate in rows)
    df = pd.DataFrame(rows, columns=["method", "rate"])
    df["rate_gib_s"] = df["rate"] / GiB
    df["rate_gb_s"] = df["rate"] / GB
    df["duration"] = bytes_total / df["rate"]
    df["duration_readable"] = df["duration"].map(format_duration)
    df["speedup"] = df["rate"] / slowest
    return df


##############################################################################
# Desk benchmarks
##############################################################################


@dataclass
class BenchSettings:
    """Service tunables of a desk benchmark.

    Attributes:
        concurrency: files copied at once (queue concurrency of the single worker).

        file_parallelism: concurrent part copies per file.

        part_size: bytes per part.

        latency: simulated seconds per object store request.

        max_inflight: throttle permits of the worker.

        poll_interval: seconds between status snapshots.
    """

    concurrency: int = 8
    file_parallelism: int = 4
    part_size: int = MIN_PART_SIZE
    latency: float = 0.0
    max_inflight: int = 64
    poll_interval: float = 0.1
    timeout: float = 300.0


def run_benchmark(
    spec: DatasetSpec,
    settings: BenchSettings = None,
    workdir: str = None,
    verify: bool = True,
) -> BenchReport:
    """Generate `spec` in a fresh simulated store, mirror it in-process and report.

    Raises:
        MirrorError: if `verify` and a copied file differs from its source.
    """
    settings = settings or BenchSettings()
    if spec.file_count == 0:
        raise ValueError("A benchmark needs at least one file")
    root = Path(workdir or tempfile.mkdtemp(prefix="bucketmirror-bench-"))
    objects = SimulatedObjectStore(root / "sim", FaultPlan(latency=settings.latency))
    keys = generate_dataset(spec, objects, "bench-src")
    objects.create_bucket("bench-dst")

    store = SQLiteStore(root / "bench.db")
    runtime = DurableRuntime(store, worker_id="bench", poll_interval=0.005)
    engine = TransferEngine(
        runtime,
        objects,
        throttle=Throttle(ThrottleConfig(settings.max_inflight)),
        queue=QueueConfig(settings.concurrency, settings.concurrency),
        retry=RetryPolicy(base_delay=0.05),
        poll_interval=settings.poll_interval,
        min_part_size=min(settings.part_size, MIN_PART_SIZE),
    )
    runtime.launch()
    try:
        handle = engine.start_transfer(
            TransferRequest(
                "bench-src",
                "bench-dst",
                keys,
                part_size=settings.part_size,
                file_parallelism=settings.file_parallelism,
            )
        )
        snapshot = TransferStatusSnapshot.from_dict(handle.get_result(timeout=settings.timeout))
    finally:
        runtime.shutdown()

    metrics = objects.instrument()
    mismatched = []
    if verify:
        copied = content_hashes(objects, "bench-dst", keys)
        mismatched = [key for key, digest in dataset_hashes(spec).items() if copied[key] != digest]
    objects.close()
    store.close()
    if mismatched:
        raise MirrorError(f"Copied content differs from source for {mismatched}")
    report = report_from_snapshot(snapshot, metrics.max_inflight)
    logger.info(
        "Benchmark of {} files at concurrency {}: {:.1f} MiB/s",
        report.files,
        settings.concurrency,
        report.rate / 2**20,
    )
    return report


def parallel_speedup(
    spec: DatasetSpec,
    levels: Iterable[int] = (1, 2, 4, 8),
    settings: BenchSettings = None,
    progress: bool = False,
) -> pd.DataFrame:
    """Run the benchmark at several file concurrency levels; speedups are relative to the first level."""
    settings = settings or BenchSettings()
    rows = []
    for level in tqdm(list(levels), desc="concurrency", disable=not progress):
        run = BenchSettings(**{**settings.__dict__, "concurrency": level})
        report = run_benchmark(spec, run)
        rows.append((level, report.duration, report.rate, report.max_inflight_observed))
    df = pd.DataFrame(rows, columns=["concurrency", "duration", "rate", "max_inflight"])
    df["speedup"] = df["duration"].iloc[0] / df["duration"]
    return df


##############################################################################
# Production cross-checks
##############################################################################


@dataclass(frozen=True)
class ProductionRun:
    name: str
    files: int
    gigabytes: float  # decimal GB
    rate_gb_s: Optional[float] = None
    minutes: Optional[float] = None


PRODUCTION_RUNS = [
    ProductionRun("oncology trial A", 989, 8785, rate_gb_s=3.8),
    ProductionRun("oncology trial B", 1056, 13289, minutes=54),
]


def cross_check(run: ProductionRun) -> BenchReport:
    """Complete a production figure pair: duration from a rate or rate from a duration."""
    bytes_total = int(run.gigabytes * GB)
    if run.rate_gb_s is not None:
        return report_benchmark(bytes_total, rate=run.rate_gb_s * GB, files=run.files)
    return report_benchmark(bytes_total, duration=run.minutes * 60, files=run.files)
