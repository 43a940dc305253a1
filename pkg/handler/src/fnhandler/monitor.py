"""Outbound-call observation and fusion-request reporting.

Observations are recorded on the request path but only into a bounded
queue; a dedicated monitor thread turns them into fusion requests against
the merger. Reporting is best effort: a dead merger never affects user
requests.

Two detection tiers feed the queue. The SDK records every remote ``invoke``
with its exact mode. Optionally, a socket-layer tracer catches plain HTTP
clients that bypass the SDK, classifying a connection as synchronous when
the socket is in blocking mode.
"""

from __future__ import annotations

import http.client
import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlparse

from .contract import InternalAddressSet

log = logging.getLogger(__name__)


class ExecutionContext(threading.local):
    """Which hosted function the current thread is executing, if any."""

    function: str | None = None
    in_sdk_call: bool = False


context = ExecutionContext()


@dataclass(frozen=True)
class OutboundObservation:
    host: str
    port: int
    blocking: bool
    function: str
    observed_at_ms: int


class MergerReporter:
    """Turns observations into fusion requests on the merger endpoint."""

    def __init__(self, merger_url: str, internal: InternalAddressSet, instance_id: str):
        parsed = urlparse(merger_url)
        self.merger_host = parsed.hostname or "127.0.0.1"
        self.merger_port = parsed.port or 80
        self.merger_path = parsed.path or "/merge"
        self.internal = internal
        self.instance_id = instance_id
        self.emitted = 0

    def detect_and_report(self, obs: OutboundObservation) -> bool:
        """Emit a fusion request iff the call blocked on an internal address."""
        if not obs.blocking or not self.internal.contains(obs.host):
            return False
        body = json.dumps(
            {
                "caller": obs.function,
                "callee_ip": obs.host,
                "callee_port": obs.port,
                "observed_at_ms": obs.observed_at_ms,
                "caller_instance": self.instance_id,
            }
        ).encode("utf-8")
        try:
            conn = http.client.HTTPConnection(self.merger_host, self.merger_port, timeout=2.0)
            try:
                conn.request("POST", self.merger_path, body=body)
                conn.getresponse().read()
            finally:
                conn.close()
        except OSError as exc:
            log.debug("merger unreachable, detection dropped: %s", exc)
            return False
        self.emitted += 1
        return True


class ObservationSink:
    """Bounded handoff between request threads and the monitor thread."""

    def __init__(self, reporter: MergerReporter, internal: InternalAddressSet, capacity: int = 1024):
        self.reporter = reporter
        self.internal = internal
        self._queue: queue.Queue[OutboundObservation] = queue.Queue(maxsize=capacity)
        self._thread = threading.Thread(target=self._drain, name="socket-monitor", daemon=True)
        self._started = False

    def record(self, obs: OutboundObservation) -> None:
        if not self.internal.contains(obs.host):
            return  # observations exist only for platform-internal destinations
        try:
            self._queue.put_nowait(obs)
        except queue.Full:
            pass  # detection is best effort; never stall the request path

    def start(self) -> "ObservationSink":
        if not self._started:
            self._thread.start()
            self._started = True
        return self

    def _drain(self) -> None:
        while True:
            obs = self._queue.get()
            try:
                self.reporter.detect_and_report(obs)
            except Exception:
                log.exception("monitor failed on %s", obs)


class SocketTracer:
    """Counts every outbound connect; optionally feeds raw detections.

    Counting is always on once installed (it is the platform's ground truth
    for "did this call open a socket"). Raw detection of non-SDK traffic is
    opt-in because the SDK tier already classifies its own calls exactly.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.connects_total = 0
        self.connect_counts: dict[tuple[str, int, bool], int] = {}
        self._sink: ObservationSink | None = None
        self._raw_detection = False
        self._installed = False

    def install(self, sink: ObservationSink | None = None, raw_detection: bool = False) -> None:
        if self._installed:
            return
        self._sink = sink
        self._raw_detection = raw_detection
        tracer = self

        class TracedSocket(socket.socket):
            def connect(self, address):  # noqa: A003 - socket API
                tracer._on_connect(self, address)
                return super().connect(address)

        socket.socket = TracedSocket  # type: ignore[misc]
        self._installed = True

    def _on_connect(self, sock: socket.socket, address) -> None:
        if not isinstance(address, tuple) or len(address) < 2:
            return
        host, port = str(address[0]), int(address[1])
        blocking = sock.gettimeout() != 0
        with self._lock:
            self.connects_total += 1
            key = (host, port, blocking)
            self.connect_counts[key] = self.connect_counts.get(key, 0) + 1
        if not self._raw_detection or self._sink is None:
            return
        if context.in_sdk_call or context.function is None:
            return  # SDK calls are classified precisely by the SDK tier
        self._sink.record(
            OutboundObservation(
                host=host,
                port=port,
                blocking=blocking,
                function=context.function,
                observed_at_ms=int(time.time() * 1000),
            )
        )

    def stats(self) -> dict:
        with self._lock:
            return {
                "connects_total": self.connects_total,
                "connects": [
                    {"host": host, "port": port, "blocking": blocking, "count": count}
                    for (host, port, blocking), count in sorted(self.connect_counts.items())
                ],
            }
