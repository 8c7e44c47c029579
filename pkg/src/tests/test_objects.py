import hashlib

import numpy as np
import pytest
from botocore.exceptions import ClientError
from botocore.stub import Stubber

from bucketmirror.errors import (
    IntermittentError,
    MissingPart,
    NoSuchBucket,
    NoSuchUpload,
    NotFound,
    PermanentStoreError,
    PermissionDenied,
    RangeInvalid,
    RetryableStoreError,
    ThrottledError,
)
from bucketmirror.objects import (
    FaultInjector,
    FaultPlan,
    KiB,
    MiB,
    MultipartUpload,
    ObjectRef,
    PartSpec,
    SimulatedObjectStore,
    UploadState,
    compute_parts,
    parse_size,
)
from bucketmirror.objects.wire import WireObjectStore, translate_client_error


def copy_in_parts(store, source, dest, part_size):
    meta = store.head_object(source)
    upload = store.create_multipart(dest)
    etags = [store.upload_part_copy(upload, source, part) for part in compute_parts(meta.size, part_size)]
    return upload, etags


class TestComputeParts:
    def test_hundred_mib_in_sixteen_mib_parts(self):
        parts = compute_parts(100 * MiB, 16 * MiB)
        assert len(parts) == 7
        assert parts[0] == PartSpec(1, 0, 16 * MiB - 1)
        assert parts[-1] == PartSpec(7, 96 * MiB, 100 * MiB - 1)
        assert parts[-1].length == 4 * MiB

    def test_exact_multiple(self):
        parts = compute_parts(32 * MiB, 16 * MiB)
        assert [part.length for part in parts] == [16 * MiB, 16 * MiB]

    def test_empty_object_has_no_parts(self):
        assert compute_parts(0, 16 * MiB) == []

    def test_single_byte(self):
        assert compute_parts(1, 16 * MiB) == [PartSpec(1, 0, 0)]

    def test_range_header(self):
        assert PartSpec(2, 16, 31).range_header() == "bytes=16-31"

    @pytest.mark.parametrize("size,part_size", [(10, 0), (10, -1), (-1, 10)])
    def test_invalid(self, size, part_size):
        with pytest.raises(ValueError):
            compute_parts(size, part_size)

    def test_random_pairs_tile_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            size = int(rng.integers(0, 10_000))
            part_size = int(rng.integers(1, 2_000))
            parts = compute_parts(size, part_size)

            # every byte is covered exactly once, in order
            covered = np.zeros(size, dtype=int)
            for number, part in enumerate(parts, start=1):
                assert part.part_number == number
                assert 0 < part.length <= part_size
                covered[part.start : part.end + 1] += 1
            assert (covered == 1).all()
            assert len(parts) == -(-size // part_size)
            if parts:
                assert parts[0].start == 0 and parts[-1].end == size - 1
                assert all(a.end + 1 == b.start for a, b in zip(parts, parts[1:]))


class TestParseSize:
    @pytest.mark.parametrize(
        "text,expected",
        [
            (16777216, 16 * MiB),
            ("16MiB", 16 * MiB),
            ("8 MiB", 8 * MiB),
            ("512KiB", 512 * KiB),
            ("1.5GiB", 3 * 512 * MiB),
            ("16MB", 16 * 10**6),
            ("1024", 1024),
            (None, None),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_size(text) == expected


class TestSimulatedStore:
    def test_multipart_copy_reproduces_content(self, objects):
        data = np.random.default_rng(1).bytes(3 * MiB + 17)
        source, dest = ObjectRef("src", "a.fastq.gz"), ObjectRef("dst", "copy/a.fastq.gz")
        objects.put_object(source, data)
        upload, etags = copy_in_parts(objects, source, dest, MiB)
        assert len(etags) == 4
        etag = objects.complete_multipart(upload, etags)

        assert etag.endswith('-4"')
        assert upload.state is UploadState.COMPLETED
        assert objects.get_object(dest) == data
        assert objects.content_hash(dest) == hashlib.sha256(data).hexdigest()
        assert objects.head_object(dest).size == len(data)
        assert objects.instrument().completed_copies == {"copy/a.fastq.gz": 1}

    def test_multipart_etag_follows_part_digests(self, objects):
        data = b"x" * 300
        source, dest = ObjectRef("src", "k"), ObjectRef("dst", "k")
        objects.put_object(source, data)
        upload, etags = copy_in_parts(objects, source, dest, 100)
        digests = b"".join(hashlib.md5(data[i : i + 100]).digest() for i in range(0, 300, 100))
        assert objects.complete_multipart(upload, etags) == f'"{hashlib.md5(digests).hexdigest()}-3"'

    def test_complete_is_idempotent(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"y" * 1000)
        upload, etags = copy_in_parts(objects, ObjectRef("src", "k"), ObjectRef("dst", "k"), 256)
        first = objects.complete_multipart(upload, etags)
        assert objects.complete_multipart(upload, etags) == first
        assert objects.instrument().completed_copies == {"k": 1}

    def test_complete_with_missing_part(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"z" * 1000)
        upload = objects.create_multipart(ObjectRef("dst", "k"))
        etag = objects.upload_part_copy(upload, ObjectRef("src", "k"), PartSpec(1, 0, 499))
        with pytest.raises(MissingPart):
            objects.complete_multipart(upload, [etag, etag])

    def test_direct_copy_of_empty_object(self, objects):
        objects.put_object(ObjectRef("src", "empty"), b"")
        objects.copy_object(ObjectRef("src", "empty"), ObjectRef("dst", "empty"))
        assert objects.get_object(ObjectRef("dst", "empty")) == b""
        assert objects.instrument().completed_copies == {"empty": 1}

    def test_invalid_range(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"a" * 10)
        upload = objects.create_multipart(ObjectRef("dst", "k"))
        with pytest.raises(RangeInvalid):
            objects.upload_part_copy(upload, ObjectRef("src", "k"), PartSpec(1, 5, 10))

    def test_missing_object_and_bucket(self, objects):
        with pytest.raises(NotFound):
            objects.head_object(ObjectRef("src", "missing"))
        with pytest.raises(NoSuchBucket):
            objects.head_object(ObjectRef("nowhere", "k"))

    def test_unreadable_object(self, objects):
        ref = ObjectRef("src", "secret")
        objects.put_object(ref, b"data", readable=False)
        with pytest.raises(PermissionDenied):
            objects.head_object(ref)
        objects.set_readable(ref, True)
        assert objects.head_object(ref).size == 4

    def test_abort_reclaims_parts(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"b" * 900)
        before = objects.stored_bytes()
        upload, _ = copy_in_parts(objects, ObjectRef("src", "k"), ObjectRef("dst", "k"), 300)

        assert objects.stored_bytes()["open_uploads"] == 900
        assert [u.upload_id for u in objects.list_incomplete_uploads("dst")] == [upload.upload_id]
        assert len(objects.list_incomplete_uploads("dst")[0].completed_parts) == 3

        objects.abort_multipart(upload)
        objects.abort_multipart(upload)
        assert upload.state is UploadState.ABORTED
        assert objects.list_incomplete_uploads("dst") == []
        assert objects.stored_bytes() == before

    def test_parts_of_aborted_upload_are_rejected(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"c" * 100)
        upload = objects.create_multipart(ObjectRef("dst", "k"))
        objects.abort_multipart(upload)
        with pytest.raises(NoSuchUpload):
            objects.upload_part_copy(upload, ObjectRef("src", "k"), PartSpec(1, 0, 99))

    def test_state_is_shared_between_instances(self, tmp_path):
        first = SimulatedObjectStore(tmp_path / "shared")
        first.create_bucket("b")
        first.put_object(ObjectRef("b", "k"), b"persisted")
        second = SimulatedObjectStore(tmp_path / "shared")
        assert second.get_object(ObjectRef("b", "k")) == b"persisted"
        assert second.list_objects("b") == ["k"]
        first.close()
        second.close()

    def test_list_objects_by_prefix(self, objects):
        for key in ["reads/b", "reads/a", "other/c"]:
            objects.put_object(ObjectRef("src", key), b"")
        assert objects.list_objects("src", "reads/") == ["reads/a", "reads/b"]

    def test_max_inflight_is_tracked(self, objects):
        objects.put_object(ObjectRef("src", "k"), b"d" * 10)
        upload = objects.create_multipart(ObjectRef("dst", "k"))
        objects.upload_part_copy(upload, ObjectRef("src", "k"), PartSpec(1, 0, 9))
        metrics = objects.instrument()
        assert metrics.max_inflight == 1
        assert metrics.inflight_writes == 0
        assert metrics.bytes_copied == 10
        objects.reset_metrics()
        assert objects.instrument().max_inflight == 0


class TestFaults:
    def test_fail_counts_then_success(self):
        injector = FaultInjector(FaultPlan(intermittent_fail_counts={"k": 2}))
        for _ in range(2):
            with pytest.raises(IntermittentError):
                injector.before("head_object", "k")
        injector.before("head_object", "k")
        injector.before("head_object", "other")
        assert [outcome for _, _, outcome in injector.history] == [
            "intermittent",
            "intermittent",
            "ok",
            "ok",
        ]

    def test_denials_apply_to_reads_only(self):
        injector = FaultInjector(FaultPlan(denied_keys={"k"}))
        with pytest.raises(PermissionDenied) as info:
            injector.before("upload_part_copy", "k")
        assert info.value.key == "k"
        injector.before("create_multipart", "k", read=False)

    def test_random_faults_are_deterministic(self):
        plan = FaultPlan(intermittent_error_rate=0.3, seed=42)

        def outcomes():
            injector = FaultInjector(plan)
            for i in range(200):
                try:
                    injector.before("upload_part_copy", f"key-{i % 7}")
                except IntermittentError:
                    pass
            return injector.history

        first = outcomes()
        assert first == outcomes()
        failures = sum(outcome == "intermittent" for _, _, outcome in first)
        assert 20 < failures < 100

    def test_plan_round_trip_through_dict(self):
        plan = FaultPlan(0.1, {"a": 2}, {"b"}, (0.01, 0.02), seed=3)
        assert FaultPlan.from_dict(plan.to_dict()) == plan

    @pytest.mark.parametrize(
        "kwargs", [{"intermittent_error_rate": 1.5}, {"latency": -1}, {"latency": (0.2, 0.1)}]
    )
    def test_invalid_plan(self, kwargs):
        with pytest.raises(ValueError):
            FaultPlan(**kwargs)

    def test_store_injects_faults_on_data_path(self, tmp_path):
        store = SimulatedObjectStore(tmp_path / "sim", FaultPlan(denied_keys={"k"}))
        store.create_bucket("src")
        store.put_object(ObjectRef("src", "k"), b"fixture writes are never faulted")
        with pytest.raises(PermissionDenied):
            store.head_object(ObjectRef("src", "k"))
        store.close()


class TestWireErrors:
    @staticmethod
    def client_error(code, status=400):
        return ClientError(
            {"Error": {"Code": code, "Message": "m"}, "ResponseMetadata": {"HTTPStatusCode": status}},
            "UploadPartCopy",
        )

    @pytest.mark.parametrize(
        "code,status,expected",
        [
            ("NoSuchKey", 404, NotFound),
            ("AccessDenied", 403, PermissionDenied),
            ("NoSuchBucket", 404, NoSuchBucket),
            ("InvalidRange", 416, RangeInvalid),
            ("InvalidPart", 400, MissingPart),
            ("NoSuchUpload", 404, NoSuchUpload),
            ("SlowDown", 503, ThrottledError),
            ("InternalError", 500, IntermittentError),
            ("", 403, PermissionDenied),
            ("SomethingNew", 400, IntermittentError),
        ],
    )
    def test_translation(self, code, status, expected):
        error = translate_client_error(self.client_error(code, status), key="k")
        assert type(error) is expected
        assert error.key == "k"

    def test_classes(self):
        assert issubclass(ThrottledError, RetryableStoreError)
        assert issubclass(RangeInvalid, PermanentStoreError)


class TestWireUploads:
    @pytest.fixture
    def wire(self):
        store = WireObjectStore(
            endpoint="http://localhost:9000", access_key="k", secret_key="s", region="us-east-1"
        )
        with Stubber(store.client) as stubber:
            yield store, stubber

    @staticmethod
    def copy_part(store, stubber, upload):
        stubber.add_response("upload_part_copy", {"CopyPartResult": {"ETag": '"e1"'}})
        store.upload_part_copy(upload, ObjectRef("src", "k"), PartSpec(1, 0, 1023))

    def test_abort_forgets_part_lengths(self, wire):
        store, stubber = wire
        upload = MultipartUpload("u-1", ObjectRef("dst", "k"))
        self.copy_part(store, stubber, upload)
        assert store._part_lengths == {"u-1": {1: 1024}}

        stubber.add_response("abort_multipart_upload", {})
        store.abort_multipart(upload)
        assert upload.state is UploadState.ABORTED
        assert store._part_lengths == {}

    def test_abort_of_vanished_upload_forgets_part_lengths(self, wire):
        store, stubber = wire
        upload = MultipartUpload("u-2", ObjectRef("dst", "k"))
        self.copy_part(store, stubber, upload)

        stubber.add_client_error("abort_multipart_upload", service_error_code="NoSuchUpload", http_status_code=404)
        store.abort_multipart(upload)
        assert store._part_lengths == {}

    def test_failed_completion_forgets_part_lengths(self, wire):
        store, stubber = wire
        upload = MultipartUpload("u-3", ObjectRef("dst", "k"))
        self.copy_part(store, stubber, upload)

        stubber.add_client_error("complete_multipart_upload", service_error_code="InternalError", http_status_code=500)
        with pytest.raises(IntermittentError):
            store.complete_multipart(upload, ['"e1"'])
        assert upload.state is UploadState.OPEN
        assert store._part_lengths == {}
