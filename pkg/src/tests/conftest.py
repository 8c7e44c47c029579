import numpy as np
import pytest

from bucketmirror.durable import DurableRuntime, QueueConfig, RetryPolicy, SQLiteStore
from bucketmirror.objects import FaultPlan, KiB, MiB, ObjectRef, SimulatedObjectStore
from bucketmirror.transfer import Throttle, ThrottleConfig, TransferEngine

SMALL_PART = 4 * KiB


@pytest.fixture
def objects(tmp_path):
    store = SimulatedObjectStore(tmp_path / "sim")
    store.create_bucket("src")
    store.create_bucket("dst")
    yield store
    store.close()


@pytest.fixture
def durable(tmp_path):
    store = SQLiteStore(tmp_path / "durable.db")
    yield store
    store.close()


@pytest.fixture
def make_runtime(durable):
    """Factory of runtimes sharing one durable store; every runtime is halted at teardown."""
    runtimes = []

    def make(worker_id="worker-1", **kwargs):
        kwargs.setdefault("heartbeat_interval", 0.2)
        kwargs.setdefault("staleness", 1.0)
        kwargs.setdefault("poll_interval", 0.005)
        runtime = DurableRuntime(durable, worker_id=worker_id, **kwargs)
        runtimes.append(runtime)
        return runtime

    yield make
    for runtime in runtimes:
        runtime.halt()


@pytest.fixture
def make_engine(make_runtime):
    """Factory of (runtime, engine) pairs over a given object store, with small parts and fast polling."""

    def make(
        objects,
        worker_id="worker-1",
        concurrency=8,
        max_inflight=64,
        retry=RetryPolicy(max_attempts=3, base_delay=0.01, backoff_factor=2.0),
    ):
        runtime = make_runtime(worker_id)
        engine = TransferEngine(
            runtime,
            objects,
            throttle=Throttle(ThrottleConfig(max_inflight)),
            queue=QueueConfig(concurrency, concurrency),
            retry=retry,
            poll_interval=0.02,
            min_part_size=SMALL_PART,
        )
        return runtime, engine

    return make


def fill(objects, keys, size=MiB, bucket="src", seed=0):
    """Put deterministic contents under `keys`; returns {key: bytes}."""
    contents = {}
    for index, key in enumerate(keys):
        data = np.random.default_rng([seed, index]).bytes(size)
        objects.put_object(ObjectRef(bucket, key), data)
        contents[key] = data
    return contents


def faulty_store(tmp_path, plan: FaultPlan, name="faulty"):
    store = SimulatedObjectStore(tmp_path / name, plan)
    store.create_bucket("src")
    store.create_bucket("dst")
    return store
