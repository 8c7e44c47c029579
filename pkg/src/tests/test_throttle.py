import threading
import time

import pytest

from bucketmirror.errors import ThrottleError
from bucketmirror.transfer import Permit, Throttle, ThrottleConfig


class TestThrottleConfig:
    def test_share_defaults_to_even_split(self):
        assert ThrottleConfig(3500, max_workers=4).per_worker_share == 875

    def test_shares_cannot_exceed_budget(self):
        with pytest.raises(ValueError):
            ThrottleConfig(100, per_worker_share=60, max_workers=2)

    @pytest.mark.parametrize("kwargs", [{"global_max_inflight": 0}, {"max_workers": 0}, {"per_worker_share": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ThrottleConfig(**kwargs)


class TestThrottle:
    def test_acquire_blocks_at_share(self):
        throttle = Throttle(ThrottleConfig(2))
        first, second = throttle.acquire(), throttle.acquire()
        assert throttle.outstanding == 2
        with pytest.raises(TimeoutError):
            throttle.acquire(timeout=0.05)
        throttle.release(first)
        third = throttle.acquire(timeout=1)
        assert {first, second, third} == {Permit(1), Permit(2), Permit(3)}

    def test_double_release(self):
        throttle = Throttle(ThrottleConfig(1))
        permit = throttle.acquire()
        throttle.release(permit)
        with pytest.raises(ThrottleError):
            throttle.release(permit)

    def test_foreign_permit(self):
        with pytest.raises(ThrottleError):
            Throttle(ThrottleConfig(1)).release(Permit(99))

    def test_permit_context_releases_on_error(self):
        throttle = Throttle(ThrottleConfig(1))
        with pytest.raises(RuntimeError):
            with throttle.permit():
                raise RuntimeError("request failed")
        assert throttle.outstanding == 0

    def test_concurrent_holders_never_exceed_share(self):
        throttle = Throttle(ThrottleConfig(global_max_inflight=20, max_workers=4))
        lock = threading.Lock()
        state = {"held": 0, "peak": 0}

        def work():
            for _ in range(20):
                with throttle.permit():
                    with lock:
                        state["held"] += 1
                        state["peak"] = max(state["peak"], state["held"])
                    time.sleep(0.001)
                    with lock:
                        state["held"] -= 1

        threads = [threading.Thread(target=work) for _ in range(16)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert state["peak"] <= 5
        assert throttle.outstanding == 0
