"""Persistence for the durable runtime.

`DurableStore` is the storage interface the runtime is written against; `SQLiteStore` implements it on an embedded SQLite database in WAL mode, reachable by every worker process on the host. Every state transition that must be atomic (claims, step completion, enqueue) runs in a `BEGIN IMMEDIATE` transaction, which serializes writers across threads and processes.
"""

import json
import sqlite3
from abc import ABC, abstractmethod
from typing import Optional

from bucketmirror.errors import StorageError, WorkflowNotFoundError
from bucketmirror.sqlite import SQLiteDatabase
from bucketmirror.durable.records import (
    EventRecord,
    QueueConfig,
    QueueEntry,
    StepRecord,
    StepStatus,
    WorkflowRecord,
    WorkflowStatus,
    now,
)


class DurableStore(ABC):
    """Storage interface of the durable runtime. Four record types, four tables."""

    @abstractmethod
    def insert_workflow(self, record: WorkflowRecord) -> tuple[WorkflowRecord, bool]:
        """Insert `record` unless its id exists. Returns the stored record and whether it was inserted."""
        raise NotImplementedError

    @abstractmethod
    def get_workflow(self, workflow_id: str) -> Optional[WorkflowRecord]:
        raise NotImplementedError

    @abstractmethod
    def list_workflows(
        self, status: WorkflowStatus = None, top_level_only: bool = False
    ) -> list[WorkflowRecord]:
        raise NotImplementedError

    @abstractmethod
    def finish_workflow(
        self,
        workflow_id: str,
        status: WorkflowStatus,
        output: str = None,
        error: str = None,
    ) -> bool:
        """Move a PENDING workflow to a terminal status. Returns False if it was already terminal."""
        raise NotImplementedError

    @abstractmethod
    def enqueue_child(
        self, child: WorkflowRecord, step: StepRecord
    ) -> tuple[WorkflowRecord, bool]:
        """Atomically persist a child workflow, its step record and its queue entry."""
        raise NotImplementedError

    @abstractmethod
    def list_children(self, parent_id: str) -> list[tuple[WorkflowRecord, StepRecord]]:
        raise NotImplementedError

    @abstractmethod
    def claim_next(
        self, worker_id: str, queue_name: str, config: QueueConfig
    ) -> Optional[QueueEntry]:
        raise NotImplementedError

    @abstractmethod
    def queue_entries(self, queue_name: str) -> list[QueueEntry]:
        raise NotImplementedError

    @abstractmethod
    def heartbeat(self, worker_id: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def release_claim(self, workflow_id: str, worker_id: str) -> bool:
        """Return an entry claimed by `worker_id` to the queue. Returns False if it was not claimed by it."""
        raise NotImplementedError

    @abstractmethod
    def release_stale_claims(
        self, worker_id: str, cutoff: float, include_own: bool
    ) -> list[QueueEntry]:
        raise NotImplementedError

    @abstractmethod
    def adopt_stale_workflows(
        self, worker_id: str, cutoff: float, include_own: bool
    ) -> list[WorkflowRecord]:
        raise NotImplementedError

    @abstractmethod
    def get_step(self, workflow_id: str, step_seq: int) -> Optional[StepRecord]:
        raise NotImplementedError

    @abstractmethod
    def get_steps(self, workflow_id: str) -> list[StepRecord]:
        raise NotImplementedError

    @abstractmethod
    def start_attempt(
        self, workflow_id: str, step_seq: int, new_execution: bool
    ) -> StepRecord:
        raise NotImplementedError

    @abstractmethod
    def finish_step(
        self,
        workflow_id: str,
        step_seq: int,
        status: StepStatus,
        output: str = None,
        error: str = None,
    ) -> StepRecord:
        """Record a terminal step outcome, finish its child workflow and release the claim, atomically."""
        raise NotImplementedError

    @abstractmethod
    def set_event(self, workflow_id: str, key: str, value: str) -> int:
        raise NotImplementedError

    @abstractmethod
    def get_event(self, workflow_id: str, key: str) -> Optional[EventRecord]:
        raise NotImplementedError

    def close(self) -> None:
        pass


_SCHEMA = """
CREATE TABLE IF NOT EXISTS workflows (
    workflow_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    input TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN ('PENDING', 'SUCCESS', 'ERROR')),
    created_at REAL NOT NULL,
    updated_at REAL NOT NULL,
    parent_id TEXT,
    queue_name TEXT,
    executor_id TEXT,
    heartbeat_at REAL,
    output TEXT,
    error TEXT
);
CREATE INDEX IF NOT EXISTS idx_workflows_parent ON workflows(parent_id);
CREATE INDEX IF NOT EXISTS idx_workflows_status ON workflows(status, queue_name);

CREATE TABLE IF NOT EXISTS steps (
    workflow_id TEXT NOT NULL,
    step_seq INTEGER NOT NULL,
    name TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN ('PENDING', 'RUNNING', 'SUCCESS', 'ERROR')),
    output TEXT,
    error TEXT,
    attempts INTEGER NOT NULL DEFAULT 0,
    executions INTEGER NOT NULL DEFAULT 0,
    attempt_times TEXT NOT NULL DEFAULT '[]',
    started_at REAL,
    finished_at REAL,
    PRIMARY KEY (workflow_id, step_seq)
);

CREATE TABLE IF NOT EXISTS queue_entries (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    queue_name TEXT NOT NULL,
    workflow_id TEXT NOT NULL UNIQUE,
    enqueued_at REAL NOT NULL,
    claimed_by TEXT,
    claimed_at REAL,
    heartbeat_at REAL
);
CREATE INDEX IF NOT EXISTS idx_queue_claims ON queue_entries(queue_name, claimed_by);

CREATE TABLE IF NOT EXISTS events (
    workflow_id TEXT NOT NULL,
    key TEXT NOT NULL,
    value TEXT NOT NULL,
    version INTEGER NOT NULL,
    updated_at REAL NOT NULL,
    PRIMARY KEY (workflow_id, key)
);
"""

_WORKFLOW_COLUMNS = "workflow_id, name, input, status, created_at, updated_at, parent_id, queue_name, executor_id, heartbeat_at, output, error"
_STEP_COLUMNS = "workflow_id, step_seq, name, status, output, error, attempts, executions, attempt_times, started_at, finished_at"
_ENTRY_COLUMNS = "queue_name, workflow_id, seq, enqueued_at, claimed_by, claimed_at, heartbeat_at"


def _workflow_from_row(row: tuple) -> WorkflowRecord:
    return WorkflowRecord(
        workflow_id=row[0],
        name=row[1],
        input=row[2],
        status=WorkflowStatus(row[3]),
        created_at=row[4],
        updated_at=row[5],
        parent_id=row[6],
        queue_name=row[7],
        executor_id=row[8],
        heartbeat_at=row[9],
        output=row[10],
        error=row[11],
    )


def _step_from_row(row: tuple) -> StepRecord:
    return StepRecord(
        workflow_id=row[0],
        step_seq=row[1],
        name=row[2],
        status=StepStatus(row[3]),
        output=row[4],
        error=row[5],
        attempts=row[6],
        executions=row[7],
        attempt_times=json.loads(row[8]),
        started_at=row[9],
        finished_at=row[10],
    )


def _entry_from_row(row: tuple) -> QueueEntry:
    return QueueEntry(
        queue_name=row[0],
        workflow_id=row[1],
        seq=row[2],
        enqueued_at=row[3],
        claimed_by=row[4],
        claimed_at=row[5],
        heartbeat_at=row[6],
    )


class SQLiteStore(DurableStore):
    """SQLite implementation of `DurableStore`.

    Usage:
        store = SQLiteStore("mirror.db")
        record, inserted = store.insert_workflow(WorkflowRecord(...))
    """

    def __init__(self, path: str, busy_timeout: float = 30.0):
        self.db = SQLiteDatabase(path, _SCHEMA, busy_timeout, error=StorageError)
        self.path = self.db.path

    def __repr__(self) -> str:
        return f"SQLiteStore({self.path})"

    def close(self) -> None:
        self.db.close()

    ##########################################################################
    # Workflows
    ##########################################################################

    def insert_workflow(self, record: WorkflowRecord) -> tuple[WorkflowRecord, bool]:
        with self.db.transaction() as conn:
            row = conn.execute(
                f"SELECT {_WORKFLOW_COLUMNS} FROM workflows WHERE workflow_id = ?",
                (record.workflow_id,),
            ).fetchone()
            if row is not None:
                return _workflow_from_row(row), False
            self._insert_workflow_row(conn, record)
        return record, True

    @staticmethod
    def _insert_workflow_row(conn: sqlite3.Connection, record: WorkflowRecord) -> None:
        conn.execute(
            f"INSERT INTO workflows ({_WORKFLOW_COLUMNS}) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
            (
                record.workflow_id,
                record.name,
                record.input,
                record.status.value,
                record.created_at,
                record.updated_at,
                record.parent_id,
                record.queue_name,
                record.executor_id,
                record.heartbeat_at,
                record.output,
                record.error,
            ),
        )

    def get_workflow(self, workflow_id: str) -> Optional[WorkflowRecord]:
        rows = self.db.query(
            f"SELECT {_WORKFLOW_COLUMNS} FROM workflows WHERE workflow_id = ?",
            (workflow_id,),
        )
        return _workflow_from_row(rows[0]) if rows else None

    def list_workflows(
        self, status: WorkflowStatus = None, top_level_only: bool = False
    ) -> list[WorkflowRecord]:
        clauses, params = [], []
        if status is not None:
            clauses.append("status = ?")
            params.append(WorkflowStatus(status).value)
        if top_level_only:
            clauses.append("queue_name IS NULL")
        where = f"WHERE {' AND '.join(clauses)}" if clauses else ""
        rows = self.db.query(
            f"SELECT {_WORKFLOW_COLUMNS} FROM workflows {where} ORDER BY created_at",
            tuple(params),
        )
        return [_workflow_from_row(row) for row in rows]

    def finish_workflow(
        self,
        workflow_id: str,
        status: WorkflowStatus,
        output: str = None,
        error: str = None,
    ) -> bool:
        with self.db.transaction() as conn:
            cursor = conn.execute(
                "UPDATE workflows SET status = ?, output = ?, error = ?, updated_at = ? WHERE workflow_id = ? AND status = 'PENDING'",
                (WorkflowStatus(status).value, output, error, now(), workflow_id),
            )
            return cursor.rowcount == 1

    ##########################################################################
    # Queue
    ##########################################################################

    def enqueue_child(
        self, child: WorkflowRecord, step: StepRecord
    ) -> tuple[WorkflowRecord, bool]:
        if child.queue_name is None:
            raise ValueError("A child workflow must name the queue it is enqueued on.")
        with self.db.transaction() as conn:
            row = conn.execute(
                f"SELECT {_WORKFLOW_COLUMNS} FROM workflows WHERE workflow_id = ?",
                (child.workflow_id,),
            ).fetchone()
            if row is not None:
                return _workflow_from_row(row), False
            self._insert_workflow_row(conn, child)
            conn.execute(
                f"INSERT INTO steps ({_STEP_COLUMNS}) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    step.workflow_id,
                    step.step_seq,
                    step.name,
                    step.status.value,
                    step.output,
                    step.error,
                    step.attempts,
                    step.executions,
                    json.dumps(step.attempt_times),
                    step.started_at,
                    step.finished_at,
                ),
            )
            conn.execute(
                "INSERT INTO queue_entries (queue_name, workflow_id, enqueued_at) VALUES (?, ?, ?)",
                (child.queue_name, child.workflow_id, now()),
            )
        return child, True

    def list_children(self, parent_id: str) -> list[tuple[WorkflowRecord, StepRecord]]:
        workflow_columns = ", ".join(f"w.{c.strip()}" for c in _WORKFLOW_COLUMNS.split(","))
        step_columns = ", ".join(f"s.{c.strip()}" for c in _STEP_COLUMNS.split(","))
        rows = self.db.query(
            f"""
            SELECT {workflow_columns}, {step_columns}
            FROM workflows w JOIN steps s ON s.workflow_id = w.workflow_id
            WHERE w.parent_id = ?
            ORDER BY s.step_seq
            """,
            (parent_id,),
        )
        width = len(_WORKFLOW_COLUMNS.split(","))
        return [(_workflow_from_row(row[:width]), _step_from_row(row[width:])) for row in rows]

    def claim_next(
        self, worker_id: str, queue_name: str, config: QueueConfig
    ) -> Optional[QueueEntry]:
        with self.db.transaction() as conn:
            in_flight, mine = conn.execute(
                """
                SELECT COUNT(claimed_by), COALESCE(SUM(claimed_by = ?), 0)
                FROM queue_entries WHERE queue_name = ?
                """,
                (worker_id, queue_name),
            ).fetchone()
            if in_flight >= config.concurrency or mine >= config.worker_concurrency:
                return None
            row = conn.execute(
                f"""
                SELECT {_ENTRY_COLUMNS} FROM queue_entries
                WHERE queue_name = ? AND claimed_by IS NULL
                ORDER BY seq LIMIT 1
                """,
                (queue_name,),
            ).fetchone()
            if row is None:
                return None
            entry = _entry_from_row(row)
            entry.claimed_by = worker_id
            entry.claimed_at = entry.heartbeat_at = now()
            conn.execute(
                "UPDATE queue_entries SET claimed_by = ?, claimed_at = ?, heartbeat_at = ? WHERE seq = ?",
                (worker_id, entry.claimed_at, entry.heartbeat_at, entry.seq),
            )
        return entry

    def queue_entries(self, queue_name: str) -> list[QueueEntry]:
        rows = self.db.query(
            f"SELECT {_ENTRY_COLUMNS} FROM queue_entries WHERE queue_name = ? ORDER BY seq",
            (queue_name,),
        )
        return [_entry_from_row(row) for row in rows]

    def heartbeat(self, worker_id: str) -> None:
        stamp = now()
        with self.db.transaction() as conn:
            conn.execute(
                "UPDATE queue_entries SET heartbeat_at = ? WHERE claimed_by = ?",
                (stamp, worker_id),
            )
            conn.execute(
                "UPDATE workflows SET heartbeat_at = ? WHERE executor_id = ? AND status = 'PENDING' AND queue_name IS NULL",
                (stamp, worker_id),
            )

    def release_claim(self, workflow_id: str, worker_id: str) -> bool:
        with self.db.transaction() as conn:
            cursor = conn.execute(
                "UPDATE queue_entries SET claimed_by = NULL, claimed_at = NULL, heartbeat_at = NULL WHERE workflow_id = ? AND claimed_by = ?",
                (workflow_id, worker_id),
            )
            return cursor.rowcount == 1

    def release_stale_claims(
        self, worker_id: str, cutoff: float, include_own: bool
    ) -> list[QueueEntry]:
        with self.db.transaction() as conn:
            rows = conn.execute(
                f"""
                SELECT {_ENTRY_COLUMNS} FROM queue_entries
                WHERE claimed_by IS NOT NULL
                  AND ((claimed_by != ? AND heartbeat_at < ?) OR (? AND claimed_by = ?))
                ORDER BY seq
                """,
                (worker_id, cutoff, int(include_own), worker_id),
            ).fetchall()
            entries = [_entry_from_row(row) for row in rows]
            for entry in entries:
                # compare-and-set on the stale claim so a concurrent recoverer cannot double-release
                conn.execute(
                    "UPDATE queue_entries SET claimed_by = NULL, claimed_at = NULL, heartbeat_at = NULL WHERE seq = ? AND claimed_by = ?",
                    (entry.seq, entry.claimed_by),
                )
        return entries

    def adopt_stale_workflows(
        self, worker_id: str, cutoff: float, include_own: bool
    ) -> list[WorkflowRecord]:
        stamp = now()
        with self.db.transaction() as conn:
            rows = conn.execute(
                f"""
                SELECT {_WORKFLOW_COLUMNS} FROM workflows
                WHERE status = 'PENDING' AND queue_name IS NULL
                  AND (
                    ((executor_id IS NULL OR executor_id != ?) AND (heartbeat_at IS NULL OR heartbeat_at < ?))
                    OR (? AND executor_id = ?)
                  )
                ORDER BY created_at
                """,
                (worker_id, cutoff, int(include_own), worker_id),
            ).fetchall()
            records = [_workflow_from_row(row) for row in rows]
            for record in records:
                conn.execute(
                    "UPDATE workflows SET executor_id = ?, heartbeat_at = ? WHERE workflow_id = ?",
                    (worker_id, stamp, record.workflow_id),
                )
                record.executor_id, record.heartbeat_at = worker_id, stamp
        return records

    ##########################################################################
    # Steps
    ##########################################################################

    def get_step(self, workflow_id: str, step_seq: int) -> Optional[StepRecord]:
        rows = self.db.query(
            f"SELECT {_STEP_COLUMNS} FROM steps WHERE workflow_id = ? AND step_seq = ?",
            (workflow_id, step_seq),
        )
        return _step_from_row(rows[0]) if rows else None

    def get_steps(self, workflow_id: str) -> list[StepRecord]:
        rows = self.db.query(
            f"SELECT {_STEP_COLUMNS} FROM steps WHERE workflow_id = ? ORDER BY step_seq",
            (workflow_id,),
        )
        return [_step_from_row(row) for row in rows]

    def start_attempt(
        self, workflow_id: str, step_seq: int, new_execution: bool
    ) -> StepRecord:
        stamp = now()
        with self.db.transaction() as conn:
            row = conn.execute(
                f"SELECT {_STEP_COLUMNS} FROM steps WHERE workflow_id = ? AND step_seq = ?",
                (workflow_id, step_seq),
            ).fetchone()
            if row is None:
                raise WorkflowNotFoundError(workflow_id)
            step = _step_from_row(row)
            if step.status is StepStatus.SUCCESS:
                return step
            if new_execution:
                step.executions += 1
                step.attempts = 0
                step.attempt_times = []
            step.attempts += 1
            step.attempt_times.append(stamp)
            step.status = StepStatus.RUNNING
            step.started_at = step.started_at or stamp
            conn.execute(
                """
                UPDATE steps SET status = ?, attempts = ?, executions = ?, attempt_times = ?, started_at = ?
                WHERE workflow_id = ? AND step_seq = ?
                """,
                (
                    step.status.value,
                    step.attempts,
                    step.executions,
                    json.dumps(step.attempt_times),
                    step.started_at,
                    workflow_id,
                    step_seq,
                ),
            )
        return step

    def finish_step(
        self,
        workflow_id: str,
        step_seq: int,
        status: StepStatus,
        output: str = None,
        error: str = None,
    ) -> StepRecord:
        status = StepStatus(status)
        if not status.terminal:
            raise ValueError(f"finish_step needs a terminal status, got {status.value}")
        stamp = now()
        with self.db.transaction() as conn:
            conn.execute(
                """
                UPDATE steps SET status = ?, output = ?, error = ?, finished_at = ?
                WHERE workflow_id = ? AND step_seq = ? AND status != 'SUCCESS'
                """,
                (status.value, output, error, stamp, workflow_id, step_seq),
            )
            conn.execute(
                "UPDATE workflows SET status = ?, output = ?, error = ?, updated_at = ? WHERE workflow_id = ? AND status = 'PENDING'",
                (
                    WorkflowStatus.SUCCESS.value
                    if status is StepStatus.SUCCESS
                    else WorkflowStatus.ERROR.value,
                    output,
                    error,
                    stamp,
                    workflow_id,
                ),
            )
            conn.execute("DELETE FROM queue_entries WHERE workflow_id = ?", (workflow_id,))
            row = conn.execute(
                f"SELECT {_STEP_COLUMNS} FROM steps WHERE workflow_id = ? AND step_seq = ?",
                (workflow_id, step_seq),
            ).fetchone()
        return _step_from_row(row)

    ##########################################################################
    # Events
    ##########################################################################

    def set_event(self, workflow_id: str, key: str, value: str) -> int:
        with self.db.transaction() as conn:
            exists = conn.execute(
                "SELECT 1 FROM workflows WHERE workflow_id = ?", (workflow_id,)
            ).fetchone()
            if exists is None:
                raise WorkflowNotFoundError(workflow_id)
            row = conn.execute(
                "SELECT version FROM events WHERE workflow_id = ? AND key = ?",
                (workflow_id, key),
            ).fetchone()
            version = 1 if row is None else row[0] + 1
            conn.execute(
                """
                INSERT INTO events (workflow_id, key, value, version, updated_at) VALUES (?, ?, ?, ?, ?)
                ON CONFLICT (workflow_id, key) DO UPDATE SET
                    value = excluded.value, version = excluded.version, updated_at = excluded.updated_at
                """,
                (workflow_id, key, value, version, now()),
            )
        return version

    def get_event(self, workflow_id: str, key: str) -> Optional[EventRecord]:
        rows = self.db.query(
            "SELECT workflow_id, key, value, version, updated_at FROM events WHERE workflow_id = ? AND key = ?",
            (workflow_id, key),
        )
        if not rows:
            return None
        return EventRecord(*rows[0])
