"""An ObjectStore speaking the S3 REST multipart-copy subset through boto3.

Only server-side operations are used: data never flows through this process. botocore errors are translated into the `bucketmirror.errors` taxonomy here, so callers never see botocore types.
"""

import threading
from contextlib import contextmanager
from typing import Iterator

import boto3
import botocore.config
import botocore.exceptions
from loguru import logger

from bucketmirror.errors import (
    IntermittentError,
    MissingPart,
    NoSuchBucket,
    NoSuchUpload,
    NotFound,
    ObjectStoreError,
    PermissionDenied,
    RangeInvalid,
    ThrottledError,
)
from bucketmirror.objects.base import (
    MultipartUpload,
    ObjectMeta,
    ObjectRef,
    ObjectStore,
    PartSpec,
    RequestMeter,
    StoreMetrics,
    UploadState,
)

VERIFY_DEPTHS = ("none", "size", "etag")

_ERROR_CODES = {
    "404": NotFound,
    "NoSuchKey": NotFound,
    "NotFound": NotFound,
    "403": PermissionDenied,
    "AccessDenied": PermissionDenied,
    "NoSuchBucket": NoSuchBucket,
    "InvalidRange": RangeInvalid,
    "InvalidPart": MissingPart,
    "InvalidPartOrder": MissingPart,
    "NoSuchUpload": NoSuchUpload,
    "SlowDown": ThrottledError,
    "Throttling": ThrottledError,
    "500": IntermittentError,
    "503": IntermittentError,
    "InternalError": IntermittentError,
    "ServiceUnavailable": IntermittentError,
    "RequestTimeout": IntermittentError,
}


def translate_client_error(error: botocore.exceptions.ClientError, key: str = None) -> ObjectStoreError:
    """Map a botocore ClientError onto the retryable/permanent taxonomy.

    Unrecognized codes become IntermittentError: an unknown failure is worth retrying.
    """
    code = str(error.response.get("Error", {}).get("Code", ""))
    status = error.response.get("ResponseMetadata", {}).get("HTTPStatusCode")
    cls = _ERROR_CODES.get(code) or _ERROR_CODES.get(str(status)) or IntermittentError
    return cls(f"{code or status}: {error}", key=key)


class WireObjectStore(ObjectStore):
    """Server-side multipart copies against any S3-compatible endpoint.

    `instrument()` reports what this process observed; it cannot see requests of other workers.
    """

    def __init__(
        self,
        endpoint: str = None,
        access_key: str = None,
        secret_key: str = None,
        region: str = None,
        verify: str = "size",
        max_pool_connections: int = 64,
    ):
        """Create a client.

        Args:
            endpoint: endpoint URL, or None for AWS.

            access_key, secret_key: credentials; None defers to the boto3 credential chain.

            region: region name.

            verify: post-copy verification, one of "none", "size" (compare content lengths) or "etag" (also require a multipart etag with the expected part count).

            max_pool_connections: HTTP connections kept per client; should cover the expected in-flight part copies.
        """
        if verify not in VERIFY_DEPTHS:
            raise ValueError(f"verify must be one of {VERIFY_DEPTHS}, got {verify!r}")
        self.verify = verify
        self.client = boto3.client(
            "s3",
            endpoint_url=endpoint,
            aws_access_key_id=access_key,
            aws_secret_access_key=secret_key,
            region_name=region,
            config=botocore.config.Config(
                max_pool_connections=max_pool_connections,
                retries={"max_attempts": 1, "mode": "standard"},
            ),
        )
        self.meter = RequestMeter()
        self.endpoint = endpoint
        self._lock = threading.Lock()
        self._part_lengths: dict[str, dict[int, int]] = {}

    def __repr__(self) -> str:
        return f"WireObjectStore({self.endpoint or 'aws'})"

    @contextmanager
    def _translated(self, key: str = None) -> Iterator[None]:
        try:
            yield
        except botocore.exceptions.ClientError as e:
            raise translate_client_error(e, key) from e
        except (
            botocore.exceptions.ConnectionError,
            botocore.exceptions.ReadTimeoutError,
            botocore.exceptions.ConnectTimeoutError,
        ) as e:
            raise IntermittentError(f"{type(e).__name__}: {e}", key=key) from e

    def create_bucket(self, bucket: str) -> None:
        with self._translated():
            try:
                self.client.create_bucket(Bucket=bucket)
            except botocore.exceptions.ClientError as e:
                code = e.response.get("Error", {}).get("Code")
                if code not in ("BucketAlreadyOwnedByYou", "BucketAlreadyExists"):
                    raise

    def head_object(self, ref: ObjectRef) -> ObjectMeta:
        with self._translated(ref.key):
            response = self.client.head_object(Bucket=ref.bucket, Key=ref.key)
        return ObjectMeta(size=response["ContentLength"], etag=response["ETag"], readable=True)

    def copy_object(self, source: ObjectRef, dest: ObjectRef) -> str:
        with self.meter.write(), self._translated(source.key):
            response = self.client.copy_object(
                Bucket=dest.bucket,
                Key=dest.key,
                CopySource={"Bucket": source.bucket, "Key": source.key},
            )
        self.meter.completed(dest.key)
        return response["CopyObjectResult"]["ETag"]

    def create_multipart(self, target: ObjectRef) -> MultipartUpload:
        with self._translated(target.key):
            response = self.client.create_multipart_upload(Bucket=target.bucket, Key=target.key)
        logger.bind(key=target.key).debug("Opened multipart upload {}", response["UploadId"])
        return MultipartUpload(upload_id=response["UploadId"], target=target)

    def upload_part_copy(
        self, upload: MultipartUpload, source: ObjectRef, part: PartSpec
    ) -> str:
        with self.meter.write(), self._translated(source.key):
            response = self.client.upload_part_copy(
                Bucket=upload.target.bucket,
                Key=upload.target.key,
                UploadId=upload.upload_id,
                PartNumber=part.part_number,
                CopySource={"Bucket": source.bucket, "Key": source.key},
                CopySourceRange=part.range_header(),
            )
        etag = response["CopyPartResult"]["ETag"]
        self.meter.copied(part.length)
        upload.completed_parts[part.part_number] = etag
        with self._lock:
            self._part_lengths.setdefault(upload.upload_id, {})[part.part_number] = part.length
        return etag

    def complete_multipart(self, upload: MultipartUpload, etags: list[str]) -> str:
        target = upload.target
        try:
            with self._translated(target.key):
                response = self.client.complete_multipart_upload(
                    Bucket=target.bucket,
                    Key=target.key,
                    UploadId=upload.upload_id,
                    MultipartUpload={
                        "Parts": [
                            {"ETag": etag, "PartNumber": number}
                            for number, etag in enumerate(etags, start=1)
                        ]
                    },
                )
        finally:
            lengths = self._forget_parts(upload)
        upload.state = UploadState.COMPLETED
        self.meter.completed(target.key)
        etag = response["ETag"]
        # parts copied by a previous life of this worker are not in `lengths`
        expected = sum(lengths.values()) if len(lengths) == len(etags) else None
        self._verify(target, etag, len(etags), expected)
        return etag

    def _verify(self, target: ObjectRef, etag: str, parts: int, expected_size: int = None) -> None:
        if self.verify == "none":
            return
        meta = self.head_object(target)
        if expected_size is not None and meta.size != expected_size:
            raise MissingPart(
                f"Completed object '{target}' has {meta.size} bytes, expected {expected_size}",
                key=target.key,
            )
        if self.verify == "etag":
            if not etag.strip('"').endswith(f"-{parts}") or meta.etag != etag:
                raise MissingPart(
                    f"Completed object '{target}' reports etag {meta.etag}, expected {etag} over {parts} parts",
                    key=target.key,
                )

    def abort_multipart(self, upload: MultipartUpload) -> None:
        target = upload.target
        try:
            with self._translated(target.key):
                self.client.abort_multipart_upload(
                    Bucket=target.bucket, Key=target.key, UploadId=upload.upload_id
                )
        except NoSuchUpload:
            pass
        finally:
            self._forget_parts(upload)
        upload.state = UploadState.ABORTED

    def _forget_parts(self, upload: MultipartUpload) -> dict[int, int]:
        with self._lock:
            return self._part_lengths.pop(upload.upload_id, {})

    def list_objects(self, bucket: str, prefix: str = "") -> list[str]:
        keys = []
        with self._translated():
            paginator = self.client.get_paginator("list_objects_v2")
            for page in paginator.paginate(Bucket=bucket, Prefix=prefix):
                keys.extend(item["Key"] for item in page.get("Contents", []))
        return sorted(keys)

    def list_incomplete_uploads(self, bucket: str) -> list[MultipartUpload]:
        uploads = []
        with self._translated():
            paginator = self.client.get_paginator("list_multipart_uploads")
            for page in paginator.paginate(Bucket=bucket):
                for item in page.get("Uploads", []):
                    uploads.append(
                        MultipartUpload(item["UploadId"], ObjectRef(bucket, item["Key"]))
                    )
        return uploads

    def instrument(self) -> StoreMetrics:
        return self.meter.snapshot()

    def reset_metrics(self) -> None:
        self.meter.reset()
