"""A small HTTP client of the mirror service, used by the command line and the crash harness."""

import time
from typing import Optional

import requests
from loguru import logger

from bucketmirror.errors import (
    MirrorError,
    TransferValidationError,
    WorkflowConflictError,
    WorkflowNotFoundError,
)
from bucketmirror.transfer.tasks import TransferRequest, TransferStatusSnapshot


class MirrorClient:
    def __init__(self, base_url: str = "http://127.0.0.1:6380", timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    def _url(self, path: str) -> str:
        return f"{self.base_url}{path}"

    @staticmethod
    def _detail(response: requests.Response) -> str:
        try:
            return str(response.json().get("detail"))
        except ValueError:
            return response.text

    def start_transfer(self, request: TransferRequest, workflow_id: str = None) -> str:
        """Start a transfer; returns its workflow id.

        Raises:
            TransferValidationError: the service rejected the request (400).

            WorkflowConflictError: `workflow_id` names a different transfer (409).
        """
        body = request.to_dict()
        if workflow_id is not None:
            body["workflow_id"] = workflow_id
        response = self.session.post(self._url("/start_transfer"), json=body, timeout=self.timeout)
        if response.status_code == 400:
            raise TransferValidationError(self._detail(response))
        if response.status_code == 409:
            raise WorkflowConflictError(workflow_id)
        response.raise_for_status()
        return response.json()["workflow_id"]

    def transfer_status(self, workflow_id: str) -> TransferStatusSnapshot:
        response = self.session.get(
            self._url(f"/transfer_status/{workflow_id}"), timeout=self.timeout
        )
        if response.status_code == 404:
            raise WorkflowNotFoundError(workflow_id)
        response.raise_for_status()
        return TransferStatusSnapshot.from_dict(response.json())

    def wait(
        self, workflow_id: str, poll_interval: float = 1.0, timeout: float = None
    ) -> TransferStatusSnapshot:
        """Poll until the transfer is complete and return its final snapshot."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            snapshot = self.transfer_status(workflow_id)
            if snapshot.complete:
                return snapshot
            if deadline is not None and time.monotonic() >= deadline:
                raise TimeoutError(f"Transfer {workflow_id} incomplete after {timeout}s")
            time.sleep(poll_interval)

    def healthz(self) -> Optional[dict]:
        """The health document, or None if the service is unreachable."""
        try:
            response = self.session.get(self._url("/healthz"), timeout=self.timeout)
        except requests.ConnectionError:
            return None
        return response.json() if response.ok else None

    def wait_until_healthy(self, timeout: float = 30.0, poll_interval: float = 0.1) -> dict:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            health = self.healthz()
            if health is not None:
                return health
            time.sleep(poll_interval)
        raise TimeoutError(f"Service at {self.base_url} not healthy after {timeout}s")

    def crash(self) -> None:
        """Ask the service to terminate immediately. The connection is expected to drop."""
        try:
            response = self.session.post(self._url("/crash"), timeout=self.timeout)
        except (requests.ConnectionError, requests.exceptions.ChunkedEncodingError):
            logger.debug("Service at {} dropped the connection, as expected", self.base_url)
            return
        if response.status_code == 403:
            raise MirrorError("The service is not in test mode; crash refused")
        response.raise_for_status()
