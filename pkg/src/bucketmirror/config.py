"""Configuration of a mirror service: one dataclass, loaded from YAML, the environment and command-line flags.

Precedence, highest first: flags (the `overrides` of `load_config`), environment variables, the configuration file, defaults.

An example configuration file:

    db: mirror.db
    listen: 127.0.0.1:6380
    backend: simulated
    sim_root: sim
    part_size: 16MiB
    file_parallelism: 4
    concurrency: 64
    worker_concurrency: 16
    global_max_inflight: 3500
    retry:
      max_attempts: 3
      base_delay: 0.5
    faults:
      intermittent_fail_counts: {reads/a.fastq.gz: 2}
      denied_keys: [reads/b.fastq.gz]
"""

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Optional

from yaml import dump, load

try:
    from yaml import CSafeDumper as Dumper
    from yaml import CSafeLoader as Loader
except ImportError:
    from yaml import SafeDumper as Dumper
    from yaml import SafeLoader as Loader

from bucketmirror.durable.records import QueueConfig, RetryPolicy
from bucketmirror.errors import ConfigError
from bucketmirror.objects.base import (
    DEFAULT_PART_SIZE,
    MAX_PART_SIZE,
    MIN_PART_SIZE,
    parse_size,
)
from bucketmirror.objects.faults import FaultPlan
from bucketmirror.transfer.throttle import S3_PREFIX_WRITE_LIMIT, ThrottleConfig

BACKENDS = ("simulated", "wire")

ENVIRONMENT = {
    "MIRROR_DB": "db",
    "MIRROR_LISTEN": "listen",
    "MIRROR_TEST_MODE": "test_mode",
    "MIRROR_BACKEND": "backend",
    "MIRROR_SIM_ROOT": "sim_root",
    "MIRROR_WORKER_ID": "worker_id",
    "MIRROR_S3_ENDPOINT": "s3_endpoint",
    "MIRROR_S3_KEY": "s3_key",
    "MIRROR_S3_SECRET": "s3_secret",
    "MIRROR_S3_REGION": "s3_region",
}

_SIZES = ("part_size", "min_part_size", "max_part_size")


def parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"Expected a boolean, got {value!r}")


@dataclass
class MirrorConfig:
    """Every tunable of a mirror service.

    Attributes:
        db: path of the durable store (a `sqlite:///` prefix is accepted).

        listen: "host:port" the HTTP API binds to.

        backend: "simulated" or "wire".

        sim_root: directory of the simulated object store.

        worker_id: id of this worker; by default derived from host name and pid.

        test_mode: enables the crash endpoint.

        part_size, min_part_size, max_part_size: default bytes per part copy and the accepted range.

        file_parallelism: default concurrent part copies per file.

        concurrency, worker_concurrency: transfer queue limits (all workers, one worker).

        max_workers: worker processes expected to share the store; sizes the per-worker throttle share.

        global_max_inflight, per_worker_share: the in-flight write request budget.

        poll_interval: seconds between published status snapshots.

        heartbeat_interval, staleness: liveness of claims and workflows, in seconds.

        retry: backoff policy of file steps.

        faults: faults injected by the simulated backend.

        s3_endpoint, s3_key, s3_secret, s3_region: wire backend connection.

        verify: wire backend post-copy verification ("none", "size", "etag").

        log_level, log_json: logging setup.
    """

    db: str = "bucketmirror.db"
    listen: str = "127.0.0.1:6380"
    backend: str = "simulated"
    sim_root: str = "bucketmirror-sim"
    worker_id: Optional[str] = None
    test_mode: bool = False
    part_size: int = DEFAULT_PART_SIZE
    min_part_size: int = MIN_PART_SIZE
    max_part_size: int = MAX_PART_SIZE
    file_parallelism: int = 4
    concurrency: int = 64
    worker_concurrency: int = 16
    max_workers: int = 1
    global_max_inflight: int = S3_PREFIX_WRITE_LIMIT
    per_worker_share: Optional[int] = None
    poll_interval: float = 1.0
    heartbeat_interval: float = 2.0
    staleness: float = 10.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    faults: FaultPlan = field(default_factory=FaultPlan)
    s3_endpoint: Optional[str] = None
    s3_key: Optional[str] = None
    s3_secret: Optional[str] = None
    s3_region: Optional[str] = None
    verify: str = "size"
    log_level: str = "INFO"
    log_json: bool = False

    @property
    def db_path(self) -> str:
        return self.db[len("sqlite:///"):] if self.db.startswith("sqlite:///") else self.db

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    @property
    def base_url(self) -> str:
        return f"http://{self.listen}"

    def queue_config(self) -> QueueConfig:
        return QueueConfig(self.concurrency, self.worker_concurrency)

    def throttle_config(self) -> ThrottleConfig:
        return ThrottleConfig(self.global_max_inflight, self.per_worker_share, self.max_workers)

    def validate(self) -> "MirrorConfig":
        """Raises ConfigError naming the first inconsistent value."""
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if ":" not in self.listen:
            raise ConfigError(f"listen must be host:port, got {self.listen!r}")
        try:
            self.port
        except ValueError as e:
            raise ConfigError(f"listen port is not a number: {self.listen!r}") from e
        if not 0 < self.min_part_size <= self.max_part_size:
            raise ConfigError(
                f"Part size bounds must satisfy 0 < min_part_size <= max_part_size, got {self.min_part_size} and {self.max_part_size}"
            )
        if not self.min_part_size <= self.part_size <= self.max_part_size:
            raise ConfigError(
                f"part_size {self.part_size} is outside [{self.min_part_size}, {self.max_part_size}]"
            )
        if self.file_parallelism < 1:
            raise ConfigError(f"file_parallelism must be positive, got {self.file_parallelism}")
        if self.poll_interval <= 0:
            raise ConfigError(f"poll_interval must be positive, got {self.poll_interval}")
        if self.staleness <= self.heartbeat_interval:
            raise ConfigError(
                f"staleness ({self.staleness}) must exceed heartbeat_interval ({self.heartbeat_interval})"
            )
        if self.verify not in ("none", "size", "etag"):
            raise ConfigError(f"verify must be none, size or etag, got {self.verify!r}")
        try:
            self.queue_config()
            self.throttle_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["retry"] = self.retry.to_dict()
        data["faults"] = self.faults.to_dict()
        return data

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            dump(self.to_dict(), f, Dumper=Dumper, sort_keys=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MirrorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {unknown}")
        values = dict(data)
        try:
            for name in _SIZES:
                if name in values:
                    values[name] = parse_size(values[name])
            if "retry" in values and not isinstance(values["retry"], RetryPolicy):
                values["retry"] = RetryPolicy(**(values["retry"] or {}))
            if "faults" in values and not isinstance(values["faults"], FaultPlan):
                values["faults"] = FaultPlan.from_dict(values["faults"])
            for name in ("test_mode", "log_json"):
                if name in values:
                    values[name] = parse_bool(values[name])
            for name in (
                "file_parallelism",
                "concurrency",
                "worker_concurrency",
                "max_workers",
                "global_max_inflight",
            ):
                if name in values:
                    values[name] = int(values[name])
            for name in ("poll_interval", "heartbeat_interval", "staleness"):
                if name in values:
                    values[name] = float(values[name])
            if values.get("per_worker_share") is not None:
                values["per_worker_share"] = int(values["per_worker_share"])
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid configuration value: {e}") from e
        return cls(**values)


def read_config_file(path: str) -> dict:
    try:
        with open(path, "r") as f:
            data = load(f, Loader=Loader)
    except OSError as e:
        raise ConfigError(f"Cannot read configuration file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration file {path} must contain a mapping")
    return data


def load_config(
    path: str = None,
    overrides: Mapping[str, Any] = None,
    environ: Mapping[str, str] = None,
) -> MirrorConfig:
    """Resolve the configuration.

    Args:
        path: YAML configuration file; by default the file named by MIRROR_CONFIG, if any.

        overrides: values from command-line flags; None values are ignored.

        environ: environment variables, by default `os.environ`.

    Raises:
        ConfigError: on unreadable files, unknown keys or inconsistent values.
    """
    environ = os.environ if environ is None else environ
    path = path or environ.get("MIRROR_CONFIG")
    data: dict[str, Any] = {}
    if path:
        data.update(read_config_file(path))
    for variable, name in ENVIRONMENT.items():
        if environ.get(variable):
            data[name] = environ[variable]
    for name, value in (overrides or {}).items():
        if value is not None:
            data[name] = value
    return MirrorConfig.from_dict(data).validate()


def with_overrides(config: MirrorConfig, **changes: Any) -> MirrorConfig:
    """A validated copy of `config` with some values replaced."""
    return replace(config, **changes).validate()

