"""Crash scenarios: run the service in a child process, kill it through /crash mid-transfer, restart it and check that the transfer converges without repeating completed files.

A scenario file is YAML:

    dataset: {file_count: 50, size: 2097152, seed: 7}
    kill_after: [30]          # completed files before each crash
    part_size: 512KiB
    file_parallelism: 4
    concurrency: 8
    latency: 0.02
    timeout: 60
"""

import os
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from loguru import logger
from yaml import load

try:
    from yaml import CSafeLoader as Loader
except ImportError:
    from yaml import SafeLoader as Loader

import bucketmirror
from bucketmirror.config import MirrorConfig
from bucketmirror.durable import SQLiteStore, StepStatus
from bucketmirror.errors import ScenarioTimeout
from bucketmirror.harness.dataset import DatasetSpec, generate_dataset
from bucketmirror.objects.base import MiB, parse_size
from bucketmirror.objects.faults import FaultPlan
from bucketmirror.objects.simulated import SimulatedObjectStore
from bucketmirror.service.client import MirrorClient
from bucketmirror.transfer.tasks import TransferRequest, TransferStatusSnapshot

SOURCE_BUCKET = "scenario-src"
DEST_BUCKET = "scenario-dst"
WORKER_ID = "scenario-worker"


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@dataclass
class ScenarioConfig:
    """A crash scenario.

    Attributes:
        dataset: the files to transfer.

        kill_after: for each crash, the number of files recorded SUCCESS that triggers it. 0 crashes right after the transfer starts.

        kill_after_seconds: crash once this long after the start instead (single crash).

        part_size, file_parallelism, concurrency: transfer tunables.

        latency: simulated seconds per object store request.

        faults: further faults of the simulated store (its latency is replaced by `latency`).

        timeout: seconds the whole scenario may take.

        workdir: directory of the store, objects and logs; a temporary directory if None.
    """

    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(50, 2 * MiB, seed=7))
    kill_after: list[int] = field(default_factory=lambda: [30])
    kill_after_seconds: Optional[float] = None
    part_size: int = 512 * 1024
    file_parallelism: int = 4
    concurrency: int = 8
    latency: float = 0.02
    faults: FaultPlan = field(default_factory=FaultPlan)
    timeout: float = 60.0
    workdir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        if "dataset" in data:
            data["dataset"] = DatasetSpec.from_dict(data["dataset"])
        if "faults" in data:
            data["faults"] = FaultPlan.from_dict(data["faults"])
        if "part_size" in data:
            data["part_size"] = parse_size(data["part_size"])
        if "kill_after" in data and not isinstance(data["kill_after"], list):
            data["kill_after"] = [data["kill_after"]]
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: str) -> "ScenarioConfig":
        with open(path, "r") as f:
            return cls.from_dict(load(f, Loader=Loader) or {})


@dataclass
class CrashRecord:
    threshold: Optional[float]
    succeeded: list[str]
    copy_counts: dict[str, int]


@dataclass
class ScenarioReport:
    """What happened to a transfer across its crashes.

    Attributes:
        workflow_id: the transfer.

        crashes: for each crash, the files recorded SUCCESS when the process died and the completed-copy counts at that moment.

        re_executed: files whose copy step ran in more than one process life.

        final: the final status snapshot.

        copy_counts: completed copies per destination key at the end.

        leaked_uploads: multipart uploads left OPEN in the destination bucket.

        duration: wall-clock seconds of the scenario.
    """

    workflow_id: str
    crashes: list[CrashRecord]
    re_executed: list[str]
    final: TransferStatusSnapshot
    copy_counts: dict[str, int]
    leaked_uploads: int
    duration: float

    @property
    def pre_crash_success(self) -> set[str]:
        return set().union(*(crash.succeeded for crash in self.crashes)) if self.crashes else set()

    def to_dict(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "crashes": [crash.__dict__ for crash in self.crashes],
            "pre_crash_success": sorted(self.pre_crash_success),
            "re_executed": self.re_executed,
            "final": self.final.to_dict(),
            "copy_counts": self.copy_counts,
            "leaked_uploads": self.leaked_uploads,
            "duration": self.duration,
        }


class ServiceProcess:
    """The mirror service running in a child process."""

    def __init__(self, config_path: Path, log_path: Path):
        self.config_path = config_path
        self.log_path = log_path
        self.process: Optional[subprocess.Popen] = None

    def start(self) -> None:
        src = str(Path(bucketmirror.__file__).resolve().parent.parent)
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(p for p in (src, env.get("PYTHONPATH")) if p)
        env["MIRROR_TEST_MODE"] = "1"
        env["MIRROR_CONFIG"] = str(self.config_path)
        with open(self.log_path, "a") as log:
            self.process = subprocess.Popen(
                [sys.executable, "-m", "bucketmirror", "serve"],
                env=env,
                stdout=log,
                stderr=subprocess.STDOUT,
            )

    def wait(self, timeout: float) -> int:
        return self.process.wait(timeout=timeout)

    def stop(self) -> None:
        if self.process is not None and self.process.poll() is None:
            self.process.terminate()
            try:
                self.process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


def _succeeded(store: SQLiteStore, workflow_id: str, keys: list[str]) -> list[str]:
    return [
        keys[step.step_seq]
        for _, step in store.list_children(workflow_id)
        if step.status is StepStatus.SUCCESS
    ]


def run_crash_scenario(scenario: ScenarioConfig) -> ScenarioReport:
    """Start a transfer, crash the service at each threshold, restart it and wait for completion.

    Raises:
        ScenarioTimeout: the transfer did not complete within `scenario.timeout`.
    """
    started = time.monotonic()
    deadline = started + scenario.timeout
    workdir = Path(scenario.workdir or tempfile.mkdtemp(prefix="bucketmirror-scenario-"))
    workdir.mkdir(parents=True, exist_ok=True)

    faults = FaultPlan.from_dict({**scenario.faults.to_dict(), "latency": scenario.latency})
    config = MirrorConfig(
        db=str(workdir / "mirror.db"),
        listen=f"127.0.0.1:{free_port()}",
        sim_root=str(workdir / "sim"),
        worker_id=WORKER_ID,
        test_mode=True,
        part_size=scenario.part_size,
        min_part_size=min(scenario.part_size, 8 * MiB),
        file_parallelism=scenario.file_parallelism,
        concurrency=scenario.concurrency,
        worker_concurrency=scenario.concurrency,
        global_max_inflight=max(64, scenario.concurrency * scenario.file_parallelism),
        poll_interval=0.2,
        heartbeat_interval=0.5,
        staleness=2.0,
        faults=faults,
    ).validate()
    config_path = workdir / "mirror.yml"
    config.save(str(config_path))

    objects = SimulatedObjectStore(config.sim_root)
    keys = generate_dataset(scenario.dataset, objects, SOURCE_BUCKET)
    objects.create_bucket(DEST_BUCKET)
    objects.reset_metrics()
    store = SQLiteStore(config.db_path)

    service = ServiceProcess(config_path, workdir / "service.log")
    client = MirrorClient(config.base_url)

    def remaining() -> float:
        left = deadline - time.monotonic()
        if left <= 0:
            raise ScenarioTimeout(f"Scenario did not converge within {scenario.timeout}s")
        return left

    crashes: list[CrashRecord] = []
    try:
        service.start()
        client.wait_until_healthy(timeout=remaining())
        workflow_id = client.start_transfer(
            TransferRequest(
                SOURCE_BUCKET,
                DEST_BUCKET,
                keys,
                part_size=scenario.part_size,
                file_parallelism=scenario.file_parallelism,
            )
        )
        logger.info("Scenario transfer {} started with {} files", workflow_id, len(keys))

        thresholds = (
            [scenario.kill_after_seconds] if scenario.kill_after_seconds is not None else scenario.kill_after
        )
        for threshold in thresholds:
            if scenario.kill_after_seconds is not None:
                time.sleep(min(threshold, remaining()))
            else:
                while len(_succeeded(store, workflow_id, keys)) < threshold:
                    remaining()
                    time.sleep(0.01)
            client.crash()
            code = service.wait(timeout=remaining())
            crash = CrashRecord(
                threshold=threshold,
                succeeded=_succeeded(store, workflow_id, keys),
                copy_counts=dict(objects.instrument().completed_copies),
            )
            crashes.append(crash)
            logger.info(
                "Service exited with code {} after {} file(s) succeeded, restarting",
                code,
                len(crash.succeeded),
            )
            service.start()
            client.wait_until_healthy(timeout=remaining())

        try:
            final = client.wait(workflow_id, poll_interval=0.1, timeout=remaining())
        except TimeoutError as e:
            raise ScenarioTimeout(str(e)) from e
    finally:
        service.stop()

    steps = [step for _, step in store.list_children(workflow_id)]
    report = ScenarioReport(
        workflow_id=workflow_id,
        crashes=crashes,
        re_executed=[keys[step.step_seq] for step in steps if step.executions > 1],
        final=final,
        copy_counts=dict(objects.instrument().completed_copies),
        leaked_uploads=len(objects.list_incomplete_uploads(DEST_BUCKET)),
        duration=time.monotonic() - started,
    )
    store.close()
    objects.close()
    return report
