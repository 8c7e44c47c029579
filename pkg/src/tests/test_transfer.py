import time
import uuid

import pytest
from conftest import SMALL_PART, faulty_store, fill

from bucketmirror.durable import RetryPolicy, StepStatus, WorkflowRecord, WorkflowStatus
from bucketmirror.durable.records import dumps
from bucketmirror.errors import (
    IntermittentError,
    PermissionDenied,
    TransferValidationError,
    WorkflowConflictError,
    WorkflowNotFoundError,
)
from bucketmirror.objects import FaultPlan, GiB, KiB, ObjectRef
from bucketmirror.transfer import (
    ErrorClass,
    FileStatus,
    FileTask,
    TransferRequest,
    TransferStatusSnapshot,
    aggregate_status,
    classify_error,
    cleanup_leaks,
    read_status,
    recommended_parallelism,
)
from bucketmirror.transfer.engine import TRANSFER_WORKFLOW, task_from_step

PART = 4 * KiB


def keys(n, prefix="reads/"):
    return [f"{prefix}sample_{i:04d}.fastq.gz" for i in range(n)]


def run(engine, request, timeout=60):
    handle = engine.start_transfer(request)
    return TransferStatusSnapshot.from_dict(handle.get_result(timeout=timeout))


def wait_for(predicate, timeout=20.0):
    deadline = time.monotonic() + timeout
    while not predicate():
        assert time.monotonic() < deadline, "condition not reached in time"
        time.sleep(0.01)


class TestAggregateStatus:
    tasks = [
        FileTask("a", size=100, status=FileStatus.SUCCESS, started_at=10.0, finished_at=12.0, duration=2.0, attempts=1),
        FileTask("b", size=300, status=FileStatus.SUCCESS, started_at=10.0, finished_at=14.0, duration=4.0, attempts=3),
        FileTask("c", status=FileStatus.FAILED, started_at=10.0, finished_at=11.0, duration=1.0, attempts=1, error="PermissionDenied: c"),
    ]

    def test_complete_snapshot(self):
        snapshot = aggregate_status(self.tasks, started_at=10.0, workflow_id="w", now=100.0)
        assert snapshot.complete
        assert snapshot.counts == {"pending": 0, "in_progress": 0, "success": 2, "failed": 1}
        assert snapshot.bytes_done == 400
        # elapsed ends at the last finish, not at `now`
        assert snapshot.elapsed == 4.0
        assert snapshot.overall_rate == 100.0
        assert [task.key for task in snapshot.failed] == ["c"]

    def test_running_snapshot(self):
        tasks = self.tasks[:1] + [FileTask("d", status=FileStatus.IN_PROGRESS, started_at=11.0, attempts=1)]
        snapshot = aggregate_status(tasks, started_at=10.0, now=15.0)
        assert not snapshot.complete
        assert snapshot.counts["in_progress"] == 1
        assert snapshot.elapsed == 5.0
        assert snapshot.overall_rate == 20.0

    def test_units(self):
        snapshot = aggregate_status(
            [FileTask("a", size=GiB, status=FileStatus.SUCCESS, started_at=0.0, finished_at=1.0, duration=1.0)],
            started_at=0.0,
        )
        units = snapshot.to_dict()["units"]
        assert units["bytes_done_gib"] == 1.0
        assert units["rate_gib_s"] == 1.0
        assert units["rate_gb_s"] == pytest.approx(1.073741824)

    def test_snapshot_dict_round_trip(self):
        snapshot = aggregate_status(self.tasks, started_at=10.0, workflow_id="w")
        assert TransferStatusSnapshot.from_dict(snapshot.to_dict()) == snapshot

    def test_pending_step(self):
        assert task_from_step("k", None) == FileTask("k")


class TestRequests:
    def test_destination_prefix(self):
        request = TransferRequest("src", "dst", ["a/b"], dest_prefix="mirror/")
        assert request.dest("a/b") == ObjectRef("dst", "mirror/a/b")
        assert request.source("a/b") == ObjectRef("src", "a/b")

    def test_part_size_is_parsed(self):
        assert TransferRequest("src", "dst", ["k"], part_size="16MiB").part_size == 16 * 1024 * 1024

    @pytest.mark.parametrize(
        "kwargs,message",
        [
            ({"keys": []}, "keys"),
            ({"keys": ["a", "a"]}, "unique"),
            ({"keys": ["/a"]}, "/"),
            ({"source_bucket": ""}, "source_bucket"),
            ({"part_size": 1024}, "part_size"),
            ({"file_parallelism": 0}, "file_parallelism"),
        ],
    )
    def test_validation(self, kwargs, message):
        fields = {"source_bucket": "src", "dest_bucket": "dst", "keys": ["k"], **kwargs}
        with pytest.raises(TransferValidationError, match=message):
            TransferRequest(**fields).validate()

    def test_from_dict_missing_field(self):
        with pytest.raises(TransferValidationError, match="keys"):
            TransferRequest.from_dict({"source_bucket": "src", "dest_bucket": "dst"})


class TestErrorClasses:
    def test_classification(self):
        assert classify_error(PermissionDenied("no", key="k")) is ErrorClass.PERMANENT
        assert classify_error(IntermittentError("flaky")) is ErrorClass.RETRYABLE
        assert classify_error(RuntimeError("unknown")) is ErrorClass.RETRYABLE

    def test_recommended_parallelism(self):
        assert recommended_parallelism(85 * 10**6) == 1
        assert recommended_parallelism(170 * 10**6 + 1) == 3
        assert recommended_parallelism(24.9 * GiB) == 315
        with pytest.raises(ValueError):
            recommended_parallelism(0)


class TestTransfers:
    def test_copies_every_file(self, objects, make_engine):
        contents = fill(objects, keys(6), size=5 * PART + 123)
        contents.update(fill(objects, ["reads/empty.fastq.gz"], size=0, seed=9))
        runtime, engine = make_engine(objects)
        runtime.launch()

        snapshot = run(engine, TransferRequest("src", "dst", list(contents), part_size=PART, file_parallelism=3))

        assert snapshot.complete
        assert snapshot.counts["success"] == 7
        assert snapshot.bytes_done == sum(len(data) for data in contents.values())
        for key, data in contents.items():
            assert objects.get_object(ObjectRef("dst", key)) == data
        assert all(task.duration is not None and task.attempts == 1 for task in snapshot.tasks)
        assert objects.list_incomplete_uploads("dst") == []
        assert set(objects.instrument().completed_copies.values()) == {1}

    def test_destination_prefix(self, objects, make_engine):
        fill(objects, ["k"], size=PART * 2)
        runtime, engine = make_engine(objects)
        runtime.launch()
        run(engine, TransferRequest("src", "dst", ["k"], dest_prefix="mirror/", part_size=PART))
        assert objects.list_objects("dst") == ["mirror/k"]

    def test_intermittent_failures_are_retried(self, tmp_path, make_engine):
        names = keys(40)
        flaky = names[::4]
        store = faulty_store(tmp_path, FaultPlan(intermittent_fail_counts={key: 2 for key in flaky}))
        contents = fill(store, names, size=3 * PART)
        runtime, engine = make_engine(store)
        runtime.launch()

        snapshot = run(engine, TransferRequest("src", "dst", names, part_size=PART))

        assert snapshot.counts["success"] == 40
        attempts = {task.key: task.attempts for task in snapshot.tasks}
        assert all(attempts[key] == 3 for key in flaky)
        assert all(attempts[key] == 1 for key in names if key not in flaky)
        assert all(store.get_object(ObjectRef("dst", key)) == data for key, data in contents.items())
        store.close()

    def test_retried_file_duration_spans_every_attempt(self, tmp_path, make_engine):
        store = faulty_store(tmp_path, FaultPlan(intermittent_fail_counts={"k": 2}))
        fill(store, ["k"], size=2 * PART)
        runtime, engine = make_engine(store, retry=RetryPolicy(max_attempts=3, base_delay=0.3, backoff_factor=2.0))
        runtime.launch()

        (task,) = run(engine, TransferRequest("src", "dst", ["k"], part_size=PART)).tasks

        assert task.status is FileStatus.SUCCESS
        assert task.attempts == 3
        # backoff of 0.3 s then 0.6 s between the three attempts
        assert task.duration >= 0.9
        assert task.duration == pytest.approx(task.finished_at - task.started_at, abs=0.002)
        store.close()

    def test_denied_files_fail_without_retries(self, tmp_path, make_engine):
        names = keys(40)
        denied = names[3::8]
        store = faulty_store(tmp_path, FaultPlan(denied_keys=set(denied)))
        fill(store, names, size=2 * PART)
        runtime, engine = make_engine(store)
        runtime.launch()

        handle = engine.start_transfer(TransferRequest("src", "dst", names, part_size=PART))
        snapshot = TransferStatusSnapshot.from_dict(handle.get_result(timeout=60))

        assert handle.get_status() is WorkflowStatus.SUCCESS
        assert snapshot.counts == {"pending": 0, "in_progress": 0, "success": 35, "failed": 5}
        assert sorted(task.key for task in snapshot.failed) == sorted(denied)
        for task in snapshot.failed:
            assert task.attempts == 1
            assert "PermissionDenied" in task.error and task.key in task.error
        store.close()

    def test_missing_source_fails_the_file(self, objects, make_engine):
        fill(objects, ["present"], size=PART)
        runtime, engine = make_engine(objects)
        runtime.launch()
        snapshot = run(engine, TransferRequest("src", "dst", ["present", "absent"], part_size=PART))
        assert [task.key for task in snapshot.failed] == ["absent"]
        assert "NotFound" in snapshot.failed[0].error

    def test_throttle_caps_inflight_writes(self, tmp_path, make_engine):
        store = faulty_store(tmp_path, FaultPlan(latency=0.002))
        names = keys(200)
        fill(store, names, size=8 * PART)
        runtime, engine = make_engine(store, concurrency=16, max_inflight=64)
        runtime.launch()

        snapshot = run(
            engine, TransferRequest("src", "dst", names, part_size=PART, file_parallelism=8), timeout=180
        )

        assert snapshot.counts["success"] == 200
        assert 8 < store.instrument().max_inflight <= 64
        assert engine.throttle.outstanding == 0
        store.close()

    def test_start_is_idempotent(self, objects, make_engine):
        fill(objects, ["k"], size=PART)
        runtime, engine = make_engine(objects)
        runtime.launch()
        request = TransferRequest("src", "dst", ["k"], part_size=PART)
        workflow_id = str(uuid.uuid4())
        first = engine.start_transfer(request, workflow_id)
        first.get_result(timeout=30)
        assert engine.start_transfer(request, workflow_id) == first
        assert objects.instrument().completed_copies == {"k": 1}
        with pytest.raises(WorkflowConflictError):
            engine.start_transfer(TransferRequest("src", "dst", ["k"], part_size=2 * PART), workflow_id)

    def test_rejects_part_size_out_of_bounds(self, objects, make_engine):
        _, engine = make_engine(objects)
        with pytest.raises(TransferValidationError):
            engine.start_transfer(TransferRequest("src", "dst", ["k"], part_size=SMALL_PART - 1))


class TestStatus:
    def test_unknown_transfer(self, durable):
        with pytest.raises(WorkflowNotFoundError):
            read_status(durable, str(uuid.uuid4()))

    def test_before_first_snapshot(self, durable):
        workflow_id = str(uuid.uuid4())
        request = TransferRequest("src", "dst", ["a", "b"], part_size=PART)
        durable.insert_workflow(WorkflowRecord(workflow_id, TRANSFER_WORKFLOW, dumps(request.to_dict())))
        snapshot = read_status(durable, workflow_id)
        assert [task.status for task in snapshot.tasks] == [FileStatus.PENDING] * 2
        assert not snapshot.complete

    def test_snapshots_are_monotone(self, tmp_path, make_engine):
        store = faulty_store(tmp_path, FaultPlan(latency=0.003))
        names = keys(30)
        fill(store, names, size=4 * PART)
        runtime, engine = make_engine(store, concurrency=4)
        runtime.launch()
        handle = engine.start_transfer(TransferRequest("src", "dst", names, part_size=PART))

        snapshots = []
        while not snapshots or not snapshots[-1].complete:
            snapshots.append(engine.status(handle.workflow_id))
            time.sleep(0.01)

        for earlier, later in zip(snapshots, snapshots[1:]):
            assert later.bytes_done >= earlier.bytes_done
            for before, after in zip(earlier.tasks, later.tasks):
                if before.status.terminal:
                    assert after.status is before.status
        assert snapshots[-1].counts["success"] == 30
        store.close()


class TestCrashRecovery:
    def test_restart_does_not_repeat_completed_files(self, tmp_path, make_engine, durable):
        store = faulty_store(tmp_path, FaultPlan(latency=0.004))
        names = keys(30)
        contents = fill(store, names, size=6 * PART)
        first, engine = make_engine(store, worker_id="worker-1", concurrency=4)
        first.launch()
        handle = engine.start_transfer(TransferRequest("src", "dst", names, part_size=PART, file_parallelism=2))

        def succeeded():
            return [
                names[step.step_seq]
                for _, step in durable.list_children(handle.workflow_id)
                if step.status is StepStatus.SUCCESS
            ]

        wait_for(lambda: len(succeeded()) >= 10)
        first.halt()
        before_crash = succeeded()
        time.sleep(0.1)
        assert len(store.list_incomplete_uploads("dst")) > 0
        assert engine.pending_transfers() == [handle.workflow_id]

        second, _ = make_engine(store, worker_id="worker-1", concurrency=4)
        second.launch()
        snapshot = TransferStatusSnapshot.from_dict(handle.get_result(timeout=60))

        assert snapshot.counts["success"] == 30
        assert engine.pending_transfers() == []
        copies = store.instrument().completed_copies
        assert all(copies[key] == 1 for key in before_crash)
        steps = [step for _, step in durable.list_children(handle.workflow_id)]
        re_executed = {names[step.step_seq] for step in steps if step.executions > 1}
        assert re_executed.isdisjoint(before_crash)
        assert all(store.get_object(ObjectRef("dst", key)) == data for key, data in contents.items())

        # the interrupted uploads are left behind until cleaned up
        visible = store.stored_bytes()["visible"]
        leaked = len(store.list_incomplete_uploads("dst"))
        assert cleanup_leaks(store, "dst") == leaked > 0
        assert store.stored_bytes() == {"visible": visible, "open_uploads": 0, "total": visible}
        assert cleanup_leaks(store, "dst") == 0
        store.close()
