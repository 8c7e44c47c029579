"""Thread-local SQLite connections with immediate transactions, shared by the durable store and the simulated object store."""

import sqlite3
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Type

from bucketmirror.errors import MirrorError, StorageError


class SQLiteDatabase:
    """A SQLite file opened in WAL mode, one connection per thread.

    Connections run in autocommit mode; `transaction()` wraps a block in `BEGIN IMMEDIATE`, which takes the write lock up front and so serializes writers across threads and processes.
    """

    def __init__(
        self,
        path: str,
        schema: str,
        busy_timeout: float = 30.0,
        error: Type[MirrorError] = StorageError,
    ):
        if str(path) == ":memory:":
            raise ValueError(
                "A file path is required: an in-memory database cannot be shared between threads and processes."
            )
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.busy_timeout = busy_timeout
        self.error = error
        self._local = threading.local()
        self._connections: list[sqlite3.Connection] = []
        self._connections_lock = threading.Lock()
        try:
            self.connection().executescript(schema)
        except sqlite3.Error as e:
            raise self.error(f"Cannot create schema in {self.path}: {e}") from e

    def connection(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            try:
                conn = sqlite3.connect(
                    self.path,
                    timeout=self.busy_timeout,
                    isolation_level=None,
                    check_same_thread=False,
                )
                conn.execute("PRAGMA journal_mode=WAL")
                conn.execute("PRAGMA synchronous=NORMAL")
                conn.execute(f"PRAGMA busy_timeout={int(self.busy_timeout * 1000)}")
            except sqlite3.Error as e:
                raise self.error(f"Cannot open database at {self.path}: {e}") from e
            self._local.conn = conn
            with self._connections_lock:
                self._connections.append(conn)
        return conn

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        conn = self.connection()
        try:
            conn.execute("BEGIN IMMEDIATE")
        except sqlite3.Error as e:
            raise self.error(f"Cannot begin transaction on {self.path}: {e}") from e
        try:
            yield conn
        except sqlite3.Error as e:
            conn.execute("ROLLBACK")
            raise self.error(f"Transaction on {self.path} failed: {e}") from e
        except BaseException:
            conn.execute("ROLLBACK")
            raise
        else:
            try:
                conn.execute("COMMIT")
            except sqlite3.Error as e:
                conn.execute("ROLLBACK")
                raise self.error(f"Commit on {self.path} failed: {e}") from e

    def query(self, sql: str, params: tuple = ()) -> list[tuple]:
        try:
            return self.connection().execute(sql, params).fetchall()
        except sqlite3.Error as e:
            raise self.error(f"Query on {self.path} failed: {e}") from e

    def close(self) -> None:
        with self._connections_lock:
            for conn in self._connections:
                try:
                    conn.close()
                except sqlite3.Error:
                    pass
            self._connections.clear()
        self._local = threading.local()
