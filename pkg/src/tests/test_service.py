import time
import uuid

import pytest
from conftest import fill
from fastapi.testclient import TestClient

from bucketmirror.config import MirrorConfig
from bucketmirror.objects import FaultPlan, KiB, SimulatedObjectStore
from bucketmirror.service import MirrorService, create_app

PART = 4 * KiB


def service_config(tmp_path, **changes):
    values = dict(
        db=str(tmp_path / "mirror.db"),
        sim_root=str(tmp_path / "sim"),
        worker_id="service-worker",
        part_size=PART,
        min_part_size=PART,
        poll_interval=0.02,
        heartbeat_interval=0.2,
        staleness=1.0,
        concurrency=4,
        worker_concurrency=4,
        global_max_inflight=32,
    )
    values.update(changes)
    return MirrorConfig(**values).validate()


@pytest.fixture
def source(tmp_path):
    store = SimulatedObjectStore(tmp_path / "sim")
    store.create_bucket("src")
    store.create_bucket("dst")
    fill(store, ["a", "b", "c"], size=3 * PART)
    yield store
    store.close()


@pytest.fixture
def service(tmp_path, source):
    with MirrorService(service_config(tmp_path)) as service:
        yield service


@pytest.fixture
def client(service):
    with TestClient(create_app(service)) as client:
        yield client


def wait_complete(client, workflow_id, timeout=30.0):
    deadline = time.monotonic() + timeout
    while True:
        response = client.get(f"/transfer_status/{workflow_id}")
        assert response.status_code == 200
        body = response.json()
        if body["complete"]:
            return body
        assert time.monotonic() < deadline, "transfer did not complete"
        time.sleep(0.02)


BODY = {"source_bucket": "src", "dest_bucket": "dst", "keys": ["a", "b", "c"]}


class TestRoutes:
    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "worker_id": "service-worker"}

    def test_transfer_to_completion(self, client, source):
        response = client.post("/start_transfer", json=BODY)
        assert response.status_code == 200
        workflow_id = response.json()["workflow_id"]
        assert str(uuid.UUID(workflow_id)) == workflow_id

        body = wait_complete(client, workflow_id)
        assert body["counts"]["success"] == 3
        assert body["bytes_done"] == 9 * PART
        assert [task["key"] for task in body["tasks"]] == ["a", "b", "c"]
        assert set(body["units"]) == {
            "bytes_total_gib",
            "bytes_total_gb",
            "bytes_done_gib",
            "bytes_done_gb",
            "rate_gib_s",
            "rate_gb_s",
        }
        assert source.list_objects("dst") == ["a", "b", "c"]

    def test_part_size_accepts_units(self, client):
        response = client.post("/start_transfer", json={**BODY, "part_size": "8KiB"})
        assert response.status_code == 200
        assert wait_complete(client, response.json()["workflow_id"])["counts"]["success"] == 3

    def test_idempotent_start(self, client):
        workflow_id = str(uuid.uuid4())
        first = client.post("/start_transfer", json={**BODY, "workflow_id": workflow_id})
        second = client.post("/start_transfer", json={**BODY, "workflow_id": workflow_id})
        assert first.status_code == second.status_code == 200
        assert first.json() == second.json() == {"workflow_id": workflow_id}

    def test_conflicting_start(self, client):
        workflow_id = str(uuid.uuid4())
        client.post("/start_transfer", json={**BODY, "workflow_id": workflow_id})
        response = client.post("/start_transfer", json={**BODY, "keys": ["a"], "workflow_id": workflow_id})
        assert response.status_code == 409

    @pytest.mark.parametrize(
        "body",
        [
            {"source_bucket": "src", "dest_bucket": "dst"},
            {**BODY, "keys": []},
            {**BODY, "keys": ["a", "a"]},
            {**BODY, "part_size": 1024},
            {**BODY, "part_size": "lots"},
            {**BODY, "file_parallelism": 0},
            {**BODY, "workflow_id": "not-a-uuid"},
        ],
    )
    def test_malformed_requests(self, client, body):
        assert client.post("/start_transfer", json=body).status_code == 400

    def test_status_of_unknown_transfer(self, client):
        assert client.get(f"/transfer_status/{uuid.uuid4()}").status_code == 404

    def test_status_of_malformed_id(self, client):
        response = client.get("/transfer_status/not-a-uuid")
        assert response.status_code == 404
        assert "not found" in response.json()["detail"]

    def test_crash_needs_test_mode(self, client):
        assert client.post("/crash").status_code == 403


def test_status_survives_restart(tmp_path, source):
    config = service_config(tmp_path)
    with MirrorService(config) as service:
        with TestClient(create_app(service)) as client:
            workflow_id = client.post("/start_transfer", json=BODY).json()["workflow_id"]
            final = wait_complete(client, workflow_id)

    with MirrorService(config) as service:
        with TestClient(create_app(service)) as client:
            assert client.get(f"/transfer_status/{workflow_id}").json() == final


def test_polling_does_not_slow_transfers(tmp_path, source):
    keys = [f"poll-{n:02d}" for n in range(12)]
    fill(source, keys, size=4 * PART, seed=5)
    body = {"source_bucket": "src", "dest_bucket": "dst", "keys": keys, "file_parallelism": 2}
    config = service_config(tmp_path, faults=FaultPlan(latency=0.05))

    with MirrorService(config) as service:
        with TestClient(create_app(service)) as client:
            quiet_id = client.post("/start_transfer", json=body).json()["workflow_id"]
            service.runtime.retrieve_workflow(quiet_id).get_result(timeout=60)
            quiet = service.engine.status(quiet_id)

            polled_id = client.post("/start_transfer", json=body).json()["workflow_id"]
            snapshots = []
            deadline = time.monotonic() + 60
            while True:
                response = client.get(f"/transfer_status/{polled_id}")
                assert response.status_code == 200
                snapshots.append(response.json())
                if snapshots[-1]["complete"]:
                    break
                assert time.monotonic() < deadline, "transfer did not complete"
                time.sleep(0.1)

    assert quiet.counts["success"] == snapshots[-1]["counts"]["success"] == len(keys)
    done = [snapshot["bytes_done"] for snapshot in snapshots]
    assert done == sorted(done)
    assert all(sum(snapshot["counts"].values()) == len(keys) for snapshot in snapshots)
    # 50 ms of slack for scheduler noise on short runs
    assert snapshots[-1]["elapsed"] <= quiet.elapsed * 1.10 + 0.05
