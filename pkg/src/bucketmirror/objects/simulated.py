"""An in-process object store with fault injection, for desk-scale and crash testing.

Metadata (buckets, objects, uploads, parts, copy counters) lives in a SQLite database and contents live in a blob directory, both under `root`. A second process opening the same root sees everything the first one wrote, which is how the crash harness inspects what a killed service left behind.

Etags follow the S3 convention: the MD5 of the content for plain objects and parts, and the MD5 of the concatenated part digests suffixed with "-N" for objects assembled from N parts.
"""

import hashlib
import os
import shutil
import tempfile
import uuid
from pathlib import Path
from typing import Optional

from bucketmirror.errors import (
    MissingPart,
    NoSuchBucket,
    NoSuchUpload,
    NotFound,
    ObjectStoreError,
    PermissionDenied,
    RangeInvalid,
)
from bucketmirror.sqlite import SQLiteDatabase
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
from bucketmirror.objects.faults import FaultInjector, FaultPlan

_SCHEMA = """
CREATE TABLE IF NOT EXISTS buckets (name TEXT PRIMARY KEY);
CREATE TABLE IF NOT EXISTS objects (
    bucket TEXT NOT NULL,
    key TEXT NOT NULL,
    size INTEGER NOT NULL,
    etag TEXT NOT NULL,
    readable INTEGER NOT NULL DEFAULT 1,
    blob TEXT NOT NULL,
    PRIMARY KEY (bucket, key)
);
CREATE TABLE IF NOT EXISTS uploads (
    upload_id TEXT PRIMARY KEY,
    bucket TEXT NOT NULL,
    key TEXT NOT NULL,
    state TEXT NOT NULL,
    final_etag TEXT,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS parts (
    upload_id TEXT NOT NULL,
    part_number INTEGER NOT NULL,
    size INTEGER NOT NULL,
    etag TEXT NOT NULL,
    blob TEXT NOT NULL,
    PRIMARY KEY (upload_id, part_number)
);
CREATE TABLE IF NOT EXISTS copies (
    bucket TEXT NOT NULL,
    key TEXT NOT NULL,
    count INTEGER NOT NULL,
    PRIMARY KEY (bucket, key)
);
CREATE TABLE IF NOT EXISTS counters (name TEXT PRIMARY KEY, value INTEGER NOT NULL);
"""

_CHUNK = 4 * 1024 * 1024


def _quoted(digest: str) -> str:
    return f'"{digest}"'


def _unquoted(etag: str) -> str:
    return etag.strip('"')


class SimulatedObjectStore(ObjectStore):
    """A persistent, fault-injecting object store.

    Usage:
        store = SimulatedObjectStore("/tmp/sim", FaultPlan(latency=0.05))
        store.create_bucket("src")
        store.put_object(ObjectRef("src", "a.fastq.gz"), b"...")
    """

    def __init__(self, root: str = None, faults: FaultPlan = None):
        """Open (or create) a simulated store.

        Args:
            root: directory holding metadata and contents; a fresh temporary directory if None.

            faults: faults to inject into data-path requests.
        """
        self.root = Path(root) if root is not None else Path(tempfile.mkdtemp(prefix="bucketmirror-sim-"))
        self.blobs = self.root / "blobs"
        self.blobs.mkdir(parents=True, exist_ok=True)
        self.db = SQLiteDatabase(self.root / "meta.db", _SCHEMA, error=ObjectStoreError)
        self.faults = FaultInjector(faults)
        self.meter = RequestMeter()

    def __repr__(self) -> str:
        return f"SimulatedObjectStore({self.root})"

    def close(self) -> None:
        self.db.close()

    ##########################################################################
    # Blob helpers
    ##########################################################################

    def _blob_path(self, blob: str) -> Path:
        return self.blobs / blob

    def _write_blob(self, data: bytes) -> tuple[str, str]:
        """Write `data` to a new blob. Returns (blob id, md5 hex digest)."""
        blob = uuid.uuid4().hex
        tmp = self._blob_path(blob + ".tmp")
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, self._blob_path(blob))
        return blob, hashlib.md5(data).hexdigest()

    def _read_range(self, blob: str, start: int, length: int) -> bytes:
        with open(self._blob_path(blob), "rb") as f:
            f.seek(start)
            return f.read(length)

    def _drop_blobs(self, blobs: list[str]) -> None:
        for blob in blobs:
            try:
                self._blob_path(blob).unlink()
            except FileNotFoundError:
                pass

    def _require_bucket(self, conn, bucket: str) -> None:
        if conn.execute("SELECT 1 FROM buckets WHERE name = ?", (bucket,)).fetchone() is None:
            raise NoSuchBucket(f"Bucket '{bucket}' does not exist")

    def _object_row(self, conn, ref: ObjectRef) -> tuple:
        self._require_bucket(conn, ref.bucket)
        row = conn.execute(
            "SELECT size, etag, readable, blob FROM objects WHERE bucket = ? AND key = ?",
            (ref.bucket, ref.key),
        ).fetchone()
        if row is None:
            raise NotFound(f"Object '{ref}' does not exist", key=ref.key)
        return row

    def _readable_object(self, ref: ObjectRef) -> tuple:
        row = self._object_row(self.db.connection(), ref)
        if not row[2]:
            raise PermissionDenied(f"Access denied reading '{ref}'", key=ref.key)
        return row

    def _count_copy(self, conn, ref: ObjectRef) -> None:
        conn.execute(
            """
            INSERT INTO copies (bucket, key, count) VALUES (?, ?, 1)
            ON CONFLICT (bucket, key) DO UPDATE SET count = count + 1
            """,
            (ref.bucket, ref.key),
        )
        self.meter.completed(ref.key)

    def _add_bytes(self, conn, nbytes: int) -> None:
        conn.execute(
            """
            INSERT INTO counters (name, value) VALUES ('bytes_copied', ?)
            ON CONFLICT (name) DO UPDATE SET value = value + excluded.value
            """,
            (nbytes,),
        )
        self.meter.copied(nbytes)

    ##########################################################################
    # Buckets and plain objects (no faults: these set up and inspect fixtures)
    ##########################################################################

    def create_bucket(self, bucket: str) -> None:
        if not bucket:
            raise ValueError("Bucket names must be non-empty")
        with self.db.transaction() as conn:
            conn.execute("INSERT OR IGNORE INTO buckets (name) VALUES (?)", (bucket,))

    def put_object(self, ref: ObjectRef, data: bytes, readable: bool = True) -> str:
        """Store `data` under `ref`, replacing any previous object. Returns the etag."""
        blob, digest = self._write_blob(data)
        with self.db.transaction() as conn:
            self._require_bucket(conn, ref.bucket)
            old = conn.execute(
                "SELECT blob FROM objects WHERE bucket = ? AND key = ?", (ref.bucket, ref.key)
            ).fetchone()
            conn.execute(
                "INSERT OR REPLACE INTO objects (bucket, key, size, etag, readable, blob) VALUES (?, ?, ?, ?, ?, ?)",
                (ref.bucket, ref.key, len(data), _quoted(digest), int(readable), blob),
            )
        if old is not None:
            self._drop_blobs([old[0]])
        return _quoted(digest)

    def set_readable(self, ref: ObjectRef, readable: bool) -> None:
        with self.db.transaction() as conn:
            self._object_row(conn, ref)
            conn.execute(
                "UPDATE objects SET readable = ? WHERE bucket = ? AND key = ?",
                (int(readable), ref.bucket, ref.key),
            )

    def get_object(self, ref: ObjectRef) -> bytes:
        row = self._object_row(self.db.connection(), ref)
        with open(self._blob_path(row[3]), "rb") as f:
            return f.read()

    def content_hash(self, ref: ObjectRef) -> str:
        """SHA-256 of the object's content."""
        row = self._object_row(self.db.connection(), ref)
        digest = hashlib.sha256()
        with open(self._blob_path(row[3]), "rb") as f:
            for chunk in iter(lambda: f.read(_CHUNK), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def list_objects(self, bucket: str, prefix: str = "") -> list[str]:
        self._require_bucket(self.db.connection(), bucket)
        rows = self.db.query(
            "SELECT key FROM objects WHERE bucket = ? AND substr(key, 1, ?) = ? ORDER BY key",
            (bucket, len(prefix), prefix),
        )
        return [row[0] for row in rows]

    def stored_bytes(self) -> dict[str, int]:
        """Byte accounting: visible objects, parts held by OPEN uploads, and their total."""
        visible = self.db.query("SELECT COALESCE(SUM(size), 0) FROM objects")[0][0]
        open_uploads = self.db.query(
            """
            SELECT COALESCE(SUM(p.size), 0) FROM parts p
            JOIN uploads u ON u.upload_id = p.upload_id WHERE u.state = 'OPEN'
            """
        )[0][0]
        return {"visible": visible, "open_uploads": open_uploads, "total": visible + open_uploads}

    ##########################################################################
    # Data path
    ##########################################################################

    def head_object(self, ref: ObjectRef) -> ObjectMeta:
        self.faults.before("head_object", ref.key)
        size, etag, readable, _ = self._readable_object(ref)
        return ObjectMeta(size=size, etag=etag, readable=bool(readable))

    def copy_object(self, source: ObjectRef, dest: ObjectRef) -> str:
        with self.meter.write():
            self.faults.before("copy_object", source.key)
            size, etag, _, blob = self._readable_object(source)
            new_blob = uuid.uuid4().hex
            shutil.copyfile(self._blob_path(blob), self._blob_path(new_blob))
            with self.db.transaction() as conn:
                self._require_bucket(conn, dest.bucket)
                old = conn.execute(
                    "SELECT blob FROM objects WHERE bucket = ? AND key = ?",
                    (dest.bucket, dest.key),
                ).fetchone()
                conn.execute(
                    "INSERT OR REPLACE INTO objects (bucket, key, size, etag, readable, blob) VALUES (?, ?, ?, ?, 1, ?)",
                    (dest.bucket, dest.key, size, etag, new_blob),
                )
                self._add_bytes(conn, size)
                self._count_copy(conn, dest)
        if old is not None:
            self._drop_blobs([old[0]])
        return etag

    def create_multipart(self, target: ObjectRef) -> MultipartUpload:
        self.faults.before("create_multipart", target.key, read=False)
        upload = MultipartUpload(upload_id=uuid.uuid4().hex, target=target)
        with self.db.transaction() as conn:
            self._require_bucket(conn, target.bucket)
            conn.execute(
                "INSERT INTO uploads (upload_id, bucket, key, state, created_at) VALUES (?, ?, ?, 'OPEN', strftime('%s', 'now'))",
                (upload.upload_id, target.bucket, target.key),
            )
        return upload

    def _upload_state(self, conn, upload_id: str) -> tuple[UploadState, Optional[str]]:
        row = conn.execute(
            "SELECT state, final_etag FROM uploads WHERE upload_id = ?", (upload_id,)
        ).fetchone()
        if row is None:
            raise NoSuchUpload(f"Upload {upload_id} does not exist")
        return UploadState(row[0]), row[1]

    def upload_part_copy(
        self, upload: MultipartUpload, source: ObjectRef, part: PartSpec
    ) -> str:
        with self.meter.write():
            self.faults.before("upload_part_copy", source.key)
            size, _, _, blob = self._readable_object(source)
            if part.part_number < 1 or part.start < 0 or part.start > part.end or part.end >= size:
                raise RangeInvalid(
                    f"Range {part.range_header()} is not satisfiable for '{source}' of {size} bytes",
                    key=source.key,
                )
            part_blob, digest = self._write_blob(self._read_range(blob, part.start, part.length))
            with self.db.transaction() as conn:
                state, _ = self._upload_state(conn, upload.upload_id)
                if state is not UploadState.OPEN:
                    self._drop_blobs([part_blob])
                    raise NoSuchUpload(
                        f"Upload {upload.upload_id} is {state.value}", key=upload.target.key
                    )
                old = conn.execute(
                    "SELECT blob FROM parts WHERE upload_id = ? AND part_number = ?",
                    (upload.upload_id, part.part_number),
                ).fetchone()
                conn.execute(
                    "INSERT OR REPLACE INTO parts (upload_id, part_number, size, etag, blob) VALUES (?, ?, ?, ?, ?)",
                    (upload.upload_id, part.part_number, part.length, _quoted(digest), part_blob),
                )
                self._add_bytes(conn, part.length)
        if old is not None:
            self._drop_blobs([old[0]])
        upload.completed_parts[part.part_number] = _quoted(digest)
        return _quoted(digest)

    def complete_multipart(self, upload: MultipartUpload, etags: list[str]) -> str:
        self.faults.before("complete_multipart", upload.target.key, read=False)
        conn = self.db.connection()
        state, final_etag = self._upload_state(conn, upload.upload_id)
        if state is UploadState.COMPLETED:
            upload.state = state
            return final_etag
        if state is UploadState.ABORTED:
            raise NoSuchUpload(f"Upload {upload.upload_id} was aborted", key=upload.target.key)
        if not etags:
            raise MissingPart("A multipart upload needs at least one part", key=upload.target.key)

        rows = {
            number: (size, etag, blob)
            for number, size, etag, blob in conn.execute(
                "SELECT part_number, size, etag, blob FROM parts WHERE upload_id = ?",
                (upload.upload_id,),
            ).fetchall()
        }
        for number, etag in enumerate(etags, start=1):
            if number not in rows or _unquoted(rows[number][1]) != _unquoted(etag):
                raise MissingPart(
                    f"Part {number} of upload {upload.upload_id} is missing or has a different etag",
                    key=upload.target.key,
                )

        # assemble outside the transaction, then publish atomically
        blob = uuid.uuid4().hex
        digests = hashlib.md5()
        total = 0
        with open(self._blob_path(blob), "wb") as out:
            for number in range(1, len(etags) + 1):
                size, etag, part_blob = rows[number]
                with open(self._blob_path(part_blob), "rb") as f:
                    shutil.copyfileobj(f, out, _CHUNK)
                digests.update(bytes.fromhex(_unquoted(etag)))
                total += size
        final_etag = _quoted(f"{digests.hexdigest()}-{len(etags)}")

        with self.db.transaction() as conn:
            state, existing = self._upload_state(conn, upload.upload_id)
            if state is not UploadState.OPEN:
                self._drop_blobs([blob])
                if state is UploadState.COMPLETED:
                    upload.state = state
                    return existing
                raise NoSuchUpload(f"Upload {upload.upload_id} was aborted", key=upload.target.key)
            target = upload.target
            self._require_bucket(conn, target.bucket)
            old = conn.execute(
                "SELECT blob FROM objects WHERE bucket = ? AND key = ?", (target.bucket, target.key)
            ).fetchone()
            conn.execute(
                "INSERT OR REPLACE INTO objects (bucket, key, size, etag, readable, blob) VALUES (?, ?, ?, ?, 1, ?)",
                (target.bucket, target.key, total, final_etag, blob),
            )
            conn.execute(
                "UPDATE uploads SET state = 'COMPLETED', final_etag = ? WHERE upload_id = ?",
                (final_etag, upload.upload_id),
            )
            part_blobs = [row[0] for row in conn.execute(
                "SELECT blob FROM parts WHERE upload_id = ?", (upload.upload_id,)
            ).fetchall()]
            conn.execute("DELETE FROM parts WHERE upload_id = ?", (upload.upload_id,))
            self._count_copy(conn, target)
        self._drop_blobs(part_blobs + ([old[0]] if old is not None else []))
        upload.state = UploadState.COMPLETED
        return final_etag

    def abort_multipart(self, upload: MultipartUpload) -> None:
        with self.db.transaction() as conn:
            row = conn.execute(
                "SELECT state FROM uploads WHERE upload_id = ?", (upload.upload_id,)
            ).fetchone()
            if row is None or row[0] != UploadState.OPEN.value:
                return
            part_blobs = [r[0] for r in conn.execute(
                "SELECT blob FROM parts WHERE upload_id = ?", (upload.upload_id,)
            ).fetchall()]
            conn.execute("DELETE FROM parts WHERE upload_id = ?", (upload.upload_id,))
            conn.execute(
                "UPDATE uploads SET state = 'ABORTED' WHERE upload_id = ?", (upload.upload_id,)
            )
        self._drop_blobs(part_blobs)
        upload.state = UploadState.ABORTED

    def list_incomplete_uploads(self, bucket: str) -> list[MultipartUpload]:
        conn = self.db.connection()
        self._require_bucket(conn, bucket)
        uploads = []
        for upload_id, key in conn.execute(
            "SELECT upload_id, key FROM uploads WHERE bucket = ? AND state = 'OPEN' ORDER BY created_at, upload_id",
            (bucket,),
        ).fetchall():
            parts = dict(
                conn.execute(
                    "SELECT part_number, etag FROM parts WHERE upload_id = ?", (upload_id,)
                ).fetchall()
            )
            uploads.append(MultipartUpload(upload_id, ObjectRef(bucket, key), parts))
        return uploads

    ##########################################################################
    # Instrumentation
    ##########################################################################

    def instrument(self) -> StoreMetrics:
        """In-flight counters of this process, completed copies and bytes of all processes sharing `root`."""
        live = self.meter.snapshot()
        completed: dict[str, int] = {}
        for key, count in self.db.query("SELECT key, count FROM copies"):
            completed[key] = completed.get(key, 0) + count
        bytes_copied = self.db.query(
            "SELECT COALESCE(MAX(value), 0) FROM counters WHERE name = 'bytes_copied'"
        )[0][0]
        return StoreMetrics(
            inflight_writes=live.inflight_writes,
            max_inflight=live.max_inflight,
            completed_copies=completed,
            bytes_copied=bytes_copied,
        )

    def reset_metrics(self) -> None:
        self.meter.reset()
        with self.db.transaction() as conn:
            conn.execute("DELETE FROM copies")
            conn.execute("DELETE FROM counters")
