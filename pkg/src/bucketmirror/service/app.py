"""HTTP routes of the mirror service.

Handlers are plain functions, run by FastAPI in its thread pool, and every one of them reads from or writes to the durable store directly: no route depends on in-memory job state.
"""

import os
from typing import TYPE_CHECKING

from fastapi import FastAPI, HTTPException, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from loguru import logger

from bucketmirror.durable.runtime import canonical_uuid
from bucketmirror.errors import (
    TransferValidationError,
    WorkflowConflictError,
    WorkflowNotFoundError,
)
from bucketmirror.service.models import (
    HealthResponse,
    StartTransferRequest,
    StartTransferResponse,
    TransferStatusResponse,
)
from bucketmirror.transfer.engine import read_status
from bucketmirror.transfer.tasks import TransferRequest

if TYPE_CHECKING:
    from bucketmirror.service.server import MirrorService


def create_app(service: "MirrorService") -> FastAPI:
    app = FastAPI(title="bucketmirror", version="0.0.1")

    @app.exception_handler(RequestValidationError)
    def malformed_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})

    @app.post("/start_transfer", response_model=StartTransferResponse)
    def start_transfer(body: StartTransferRequest) -> StartTransferResponse:
        config = service.config
        try:
            request = TransferRequest(
                source_bucket=body.source_bucket,
                dest_bucket=body.dest_bucket,
                keys=tuple(body.keys),
                dest_prefix=body.dest_prefix,
                part_size=body.part_size if body.part_size is not None else config.part_size,
                file_parallelism=(
                    body.file_parallelism if body.file_parallelism is not None else config.file_parallelism
                ),
            )
            workflow_id = str(body.workflow_id) if body.workflow_id else None
            handle = service.engine.start_transfer(request, workflow_id)
        except WorkflowConflictError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        except (TransferValidationError, ValueError) as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return StartTransferResponse(workflow_id=handle.workflow_id)

    @app.get("/transfer_status/{workflow_id}", response_model=TransferStatusResponse)
    def transfer_status(workflow_id: str) -> dict:
        try:
            return read_status(service.store, canonical_uuid(workflow_id)).to_dict()
        except (ValueError, WorkflowNotFoundError) as e:
            raise HTTPException(
                status_code=404, detail=f"Transfer {workflow_id} not found"
            ) from e

    @app.post("/crash")
    def crash() -> None:
        if not service.config.test_mode:
            raise HTTPException(status_code=403, detail="The crash endpoint needs MIRROR_TEST_MODE=1")
        logger.warning("Crash requested, terminating immediately")
        os._exit(1)

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(status="ok", worker_id=service.runtime.worker_id)

    return app
