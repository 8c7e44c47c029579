"""Request and response bodies of the HTTP API. Field names match the domain types."""

from typing import Optional, Union
from uuid import UUID

from pydantic import BaseModel, Field


class StartTransferRequest(BaseModel):
    source_bucket: str
    dest_bucket: str
    keys: list[str]
    dest_prefix: str = ""
    part_size: Optional[Union[int, str]] = Field(
        default=None, description='Bytes per part, e.g. 16777216 or "16MiB"; the service default if omitted.'
    )
    file_parallelism: Optional[int] = None
    workflow_id: Optional[UUID] = Field(
        default=None, description="Idempotency key: posting the same id and body again returns the same transfer."
    )


class StartTransferResponse(BaseModel):
    workflow_id: str


class FileTaskModel(BaseModel):
    key: str
    size: Optional[int] = None
    status: str
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    duration: Optional[float] = None
    attempts: int = 0
    error: Optional[str] = None


class Units(BaseModel):
    bytes_total_gib: float
    bytes_total_gb: float
    bytes_done_gib: float
    bytes_done_gb: float
    rate_gib_s: float
    rate_gb_s: float


class TransferStatusResponse(BaseModel):
    workflow_id: str
    tasks: list[FileTaskModel]
    counts: dict[str, int]
    bytes_total: int
    bytes_done: int
    elapsed: float
    overall_rate: float
    complete: bool
    units: Units


class HealthResponse(BaseModel):
    status: str
    worker_id: str
