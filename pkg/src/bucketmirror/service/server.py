"""Wiring of a mirror service: durable store, object store, runtime, throttle, engine and HTTP server."""

import uvicorn
from loguru import logger

from bucketmirror.config import MirrorConfig
from bucketmirror.durable import DurableRuntime, SQLiteStore, WorkflowHandle
from bucketmirror.objects.base import ObjectStore
from bucketmirror.objects.simulated import SimulatedObjectStore
from bucketmirror.service.app import create_app
from bucketmirror.transfer.engine import TransferEngine
from bucketmirror.transfer.throttle import Throttle


def build_object_store(config: MirrorConfig) -> ObjectStore:
    if config.backend == "wire":
        from bucketmirror.objects.wire import WireObjectStore

        return WireObjectStore(
            endpoint=config.s3_endpoint,
            access_key=config.s3_key,
            secret_key=config.s3_secret,
            region=config.s3_region,
            verify=config.verify,
            max_pool_connections=max(config.throttle_config().per_worker_share, 10),
        )
    return SimulatedObjectStore(config.sim_root, config.faults)


class MirrorService:
    """One worker of the mirror service.

    Usage:
        with MirrorService(load_config()) as service:
            handle = service.engine.start_transfer(request)
    """

    def __init__(self, config: MirrorConfig, objects: ObjectStore = None):
        self.config = config
        self.store = SQLiteStore(config.db_path)
        self.objects = objects or build_object_store(config)
        self.runtime = DurableRuntime(
            self.store,
            worker_id=config.worker_id,
            heartbeat_interval=config.heartbeat_interval,
            staleness=config.staleness,
        )
        self.throttle = Throttle(config.throttle_config())
        self.engine = TransferEngine(
            self.runtime,
            self.objects,
            throttle=self.throttle,
            queue=config.queue_config(),
            retry=config.retry,
            poll_interval=config.poll_interval,
            min_part_size=config.min_part_size,
            max_part_size=config.max_part_size,
        )

    def launch(self) -> list[WorkflowHandle]:
        recovered = self.runtime.launch()
        if self.runtime.unrecoverable:
            logger.warning(
                "{} pending workflow(s) cannot be recovered by this service: {}",
                len(self.runtime.unrecoverable),
                [record.workflow_id for record in self.runtime.unrecoverable],
            )
        pending = self.engine.pending_transfers()
        if pending:
            logger.info("{} transfer(s) in progress: {}", len(pending), pending)
        return recovered

    def shutdown(self, wait: bool = True) -> None:
        self.runtime.shutdown(wait=wait)
        self.objects.close()
        self.store.close()

    def __enter__(self) -> "MirrorService":
        self.launch()
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def serve(self) -> None:
        """Launch the runtime and serve the HTTP API until interrupted."""
        app = create_app(self)
        recovered = self.launch()
        logger.info(
            "Serving on {} as worker {} ({} workflow(s) recovered, test mode {})",
            self.config.listen,
            self.runtime.worker_id,
            len(recovered),
            "on" if self.config.test_mode else "off",
        )
        try:
            uvicorn.run(
                app,
                host=self.config.host,
                port=self.config.port,
                log_level="warning",
                access_log=False,
            )
        finally:
            self.shutdown(wait=False)
