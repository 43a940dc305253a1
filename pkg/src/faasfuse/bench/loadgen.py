"""Open-loop constant-rate load generation plus a platform stats sampler.

Requests launch on an absolute schedule (start + i/rate) regardless of how
long earlier responses take, so the configured arrival rate holds even when
the platform is slower than the inter-arrival gap.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from typing import Callable

from ..netutil import http_request
from .records import RequestSample, StatSample

log = logging.getLogger(__name__)


def run_open_loop(
    host: str,
    port: int,
    entry: str,
    n: int,
    rate: float,
    payload_fn: Callable[[int], bytes],
    t0_perf: float,
    timeout: float = 120.0,
) -> list[RequestSample]:
    """Issue exactly ``n`` requests at fixed arrival times; never closes the loop."""
    samples: list[RequestSample | None] = [None] * n
    path = f"/fn/{entry}"

    def one(index: int) -> None:
        send_perf = time.perf_counter()
        send_rel_ms = (send_perf - t0_perf) * 1000.0
        try:
            reply = http_request("POST", host, port, path, payload_fn(index), timeout=timeout)
            status, body = reply.status, reply.body
        except OSError as exc:
            log.warning("request %d failed at transport level: %s", index, exc)
            status, body = 0, b""
        samples[index] = RequestSample(
            index=index,
            send_rel_ms=send_rel_ms,
            latency_ms=(time.perf_counter() - send_perf) * 1000.0,
            status=status,
            body_sha256=hashlib.sha256(body).hexdigest(),
        )

    interval = 1.0 / rate
    threads = []
    for index in range(n):
        target = t0_perf + index * interval
        delay = target - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        thread = threading.Thread(target=one, args=(index,), name=f"load-{index}")
        thread.start()
        threads.append(thread)
    for thread in threads:
        thread.join()
    return [s for s in samples if s is not None]


class StatsSampler:
    """Polls instance count and summed sandbox RSS on a fixed cadence."""

    def __init__(self, platform, t0_perf: float, period_s: float = 0.25):
        self.platform = platform
        self.t0_perf = t0_perf
        self.period_s = period_s
        self.samples: list[StatSample] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="stats-sampler", daemon=True)

    def start(self) -> "StatsSampler":
        self._thread.start()
        return self

    def stop(self) -> list[StatSample]:
        self._stop.set()
        self._thread.join(timeout=10)
        return self.samples

    def _run(self) -> None:
        while not self._stop.is_set():
            rel_ms = (time.perf_counter() - self.t0_perf) * 1000.0
            live = self.platform.registry.live_instances()
            rss = sum(s.rss_bytes for s in self.platform.manager.measure_rss())
            self.samples.append(StatSample(rel_ms=rel_ms, instance_count=len(live), rss_sum_bytes=rss))
            self._stop.wait(self.period_s)
