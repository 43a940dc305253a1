"""Platform entry point: client invocation routing plus the admin API.

Routes:
    POST /fn/<name>              invoke a deployed function
    PUT  /admin/functions/<name> deploy (body: zip of the function directory)
    GET  /admin/stats            platform snapshot (JSON)
    GET  /health                 gateway liveness
    POST /merge                  fusion-request intake for the merger

Proxying reads one immutable routing snapshot per attempt and retries once
on a connection-level failure with a fresh snapshot, which closes the race
between a routing swap and connection establishment.
"""

from __future__ import annotations

import json
import logging
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .core import FusionRequest, check_function_id
from .errors import InvalidFunctionId
from .netutil import http_request
from .wire import (
    DISPATCH_HEADER,
    HEALTH_PATH,
    INSTANCE_ADDRESS_HEADER,
    INVOKE_PATH_PREFIX,
    MERGE_PATH,
    SERVED_BY_HEADER,
)

log = logging.getLogger(__name__)


class InflightTracker:
    """Outstanding proxied requests per instance; feeds the drain contract."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}

    def incr(self, instance_id: str) -> None:
        with self._lock:
            self._counts[instance_id] = self._counts.get(instance_id, 0) + 1

    def decr(self, instance_id: str) -> None:
        with self._lock:
            left = self._counts.get(instance_id, 0) - 1
            if left <= 0:
                self._counts.pop(instance_id, None)
            else:
                self._counts[instance_id] = left

    def count(self, instance_id: str) -> int:
        with self._lock:
            return self._counts.get(instance_id, 0)


class GatewayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "faasfuse-gateway"

    def log_message(self, fmt, *args):
        pass

    # -- helpers ---------------------------------------------------------------

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _send(
        self,
        status: int,
        body: bytes,
        content_type: str = "application/octet-stream",
        extra_headers: list[tuple[str, str]] | None = None,
    ) -> None:
        try:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            for key, value in extra_headers or ():
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client gave up; nothing left to tell it

    def _send_json(self, status: int, doc: dict) -> None:
        self._send(status, json.dumps(doc, sort_keys=True).encode("utf-8"), "application/json")

    # -- routes ------------------------------------------------------------------

    def do_GET(self):
        platform = self.server.platform
        if self.path == HEALTH_PATH:
            self._send_json(200, {"ok": True})
        elif self.path == "/admin/stats":
            self._send_json(200, platform.stats())
        else:
            self._send_json(404, {"error": f"no such path: {self.path}"})

    def do_POST(self):
        if self.path.startswith(INVOKE_PATH_PREFIX):
            self._invoke(self.path[len(INVOKE_PATH_PREFIX):])
        elif self.path == MERGE_PATH:
            self._merge_intake()
        else:
            self._send_json(404, {"error": f"no such path: {self.path}"})

    def do_PUT(self):
        prefix = "/admin/functions/"
        if not self.path.startswith(prefix):
            self._send_json(404, {"error": f"no such path: {self.path}"})
            return
        name = self.path[len(prefix):]
        platform = self.server.platform
        try:
            check_function_id(name)
        except InvalidFunctionId as exc:
            self._send_json(400, {"error": str(exc)})
            return
        from .errors import BundleError, DeployError, HealthGateError

        try:
            instance = platform.deploy_function(name, archive=self._body())
        except DeployError as exc:
            status = 409 if "already deployed" in str(exc) else 400
            self._send_json(status, {"error": str(exc)})
        except BundleError as exc:
            self._send_json(400, {"error": str(exc)})
        except HealthGateError as exc:
            self._send_json(500, {"error": str(exc)})
        else:
            self._send_json(200, {"deployed": name, "instance": instance.id})

    # -- invocation proxy ----------------------------------------------------------

    def _invoke(self, name: str) -> None:
        platform = self.server.platform
        try:
            check_function_id(name)
        except InvalidFunctionId as exc:
            self._send_json(400, {"error": str(exc)})
            return
        body = self._body()
        last_error: Exception | None = None
        for _attempt in range(2):  # second pass uses a fresh snapshot
            table = platform.router.current()
            ref = table.entries.get(name)
            if ref is None:
                self._send_json(404, {"error": f"function not deployed: {name}"})
                return
            platform.inflight.incr(ref.instance_id)
            try:
                reply = http_request(
                    "POST", ref.host, ref.port, "/",
                    body, {DISPATCH_HEADER: name},
                    timeout=platform.config.proxy_timeout_ms / 1000.0,
                )
            except OSError as exc:
                last_error = exc
                continue
            finally:
                platform.inflight.decr(ref.instance_id)
            self._send(
                reply.status,
                reply.body,
                reply.headers.get("content-type", "application/octet-stream"),
                extra_headers=[
                    (SERVED_BY_HEADER, ref.instance_id),
                    (INSTANCE_ADDRESS_HEADER, f"{ref.host}:{ref.port}"),
                ],
            )
            return
        self._send_json(502, {"error": f"instance unreachable after retry: {last_error}"})

    # -- fusion-request intake --------------------------------------------------------

    def _merge_intake(self) -> None:
        platform = self.server.platform
        try:
            req = parse_fusion_request(self._body())
        except (ValueError, InvalidFunctionId) as exc:
            self._send_json(400, {"error": f"malformed fusion request: {exc}"})
            return
        ack = platform.merger.submit(req)
        self._send_json(200, {"status": ack.status, "detail": ack.detail})


def parse_fusion_request(body: bytes) -> FusionRequest:
    doc = json.loads(body.decode("utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("body must be a JSON object")
    try:
        return FusionRequest(
            caller=doc["caller"],
            callee_host=str(doc["callee_ip"]),
            callee_port=int(doc["callee_port"]),
            observed_at_ms=int(doc["observed_at_ms"]),
            caller_instance=doc.get("caller_instance"),
        )
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]}") from exc


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, host: str, port: int, platform):
        super().__init__((host, port), GatewayHandler)
        self.platform = platform

    def handle_error(self, request, client_address):
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionResetError, BrokenPipeError)):
            return  # client vanished; routine during instance teardown
        log.exception("error handling request from %s", client_address)
