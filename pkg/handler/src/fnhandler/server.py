"""HTTP server and process entry point for the handler runtime.

Launched by the platform's sandbox backend as::

    python -m fnhandler --bundle-root DIR --listen-port N \
        --gateway HOST:PORT --merger URL --internal-set CIDRS \
        [--workers N] [--detect-sockets]

Requests are dispatched on a fixed-size worker pool (default 4); the
detection monitor runs on its own thread.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

from .contract import (
    DISPATCH_HEADER,
    ENV_HOP_DELAY_MS,
    ENV_INSTANCE_ID,
    HEALTH_PATH,
    STATS_PATH,
    InternalAddressSet,
)
from .loader import LocalRegistry, Request
from .monitor import MergerReporter, ObservationSink, SocketTracer, context
from .sdk import Sdk, coerce_response

log = logging.getLogger("fnhandler")


class RequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "fnhandler"

    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, body: bytes, content_type: str = "application/octet-stream") -> None:
        try:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_GET(self):
        runtime: "HandlerRuntime" = self.server.runtime
        if self.path == HEALTH_PATH:
            if runtime.registry.ready:
                self._send(200, b'{"ready":true}', "application/json")
            else:
                doc = {"ready": False, "errors": runtime.registry.errors}
                self._send(503, json.dumps(doc).encode(), "application/json")
        elif self.path == STATS_PATH:
            self._send(200, json.dumps(runtime.stats(), sort_keys=True).encode(), "application/json")
        else:
            self._send(404, b"not found")

    def do_POST(self):
        runtime: "HandlerRuntime" = self.server.runtime
        if not runtime.registry.ready:
            self._send(503, b"instance not ready")
            return
        name = self.headers.get(DISPATCH_HEADER)
        if not name:
            self._send(400, f"missing {DISPATCH_HEADER} header".encode())
            return
        handler = runtime.registry.handlers.get(name)
        if handler is None:
            self._send(404, f"function not hosted here: {name}".encode())
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        context.function = name
        try:
            result = coerce_response(handler(Request(name, body, dict(self.headers))))
        except Exception as exc:
            log.exception("handler %s raised", name)
            self._send(500, f"function {name} failed: {type(exc).__name__}: {exc}".encode())
            return
        finally:
            context.function = None
        self._send(200, result)


class PooledHTTPServer(HTTPServer):
    """HTTP server dispatching connections on a fixed worker pool."""

    allow_reuse_address = True

    def __init__(self, port: int, runtime: "HandlerRuntime", workers: int):
        super().__init__(("127.0.0.1", port), RequestHandler)
        self.runtime = runtime
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="worker")

    def process_request(self, request, client_address):
        self._pool.submit(self._work, request, client_address)

    def _work(self, request, client_address):
        try:
            self.finish_request(request, client_address)
        except (ConnectionResetError, BrokenPipeError):
            pass
        except Exception:
            self.handle_error(request, client_address)
        finally:
            self.shutdown_request(request)


class HandlerRuntime:
    """Wires loader, SDK, monitor, and server for one sandbox process."""

    def __init__(self, args) -> None:
        internal = InternalAddressSet.parse(args.internal_set)
        instance_id = os.environ.get(ENV_INSTANCE_ID, "unknown-instance")
        hop_delay_ms = int(os.environ.get(ENV_HOP_DELAY_MS, "0"))

        self.instance_id = instance_id
        self.registry = LocalRegistry()
        self.reporter = MergerReporter(args.merger, internal, instance_id)
        self.sink = ObservationSink(self.reporter, internal).start()
        self.tracer = SocketTracer()
        self.tracer.install(sink=self.sink, raw_detection=args.detect_sockets)

        gateway_host, _, gateway_port = args.gateway.rpartition(":")
        self.sdk = Sdk(
            registry=self.registry,
            gateway=(gateway_host, int(gateway_port)),
            internal=internal,
            observations=self.sink,
            hop_delay_ms=hop_delay_ms,
        )
        self.sdk.install()
        self.server = PooledHTTPServer(args.listen_port, self, workers=args.workers)
        self.bundle_root = Path(args.bundle_root)

    def stats(self) -> dict:
        return {
            "instance": self.instance_id,
            "functions": list(self.registry.manifest),
            "ready": self.registry.ready,
            "sockets": self.tracer.stats(),
            "sdk_calls": self.sdk.counters.snapshot(),
            "detections_emitted": self.reporter.emitted,
        }

    def run_forever(self) -> int:
        thread = threading.Thread(target=self.server.serve_forever, name="http", daemon=True)
        thread.start()
        self.registry.load(self.bundle_root)
        if self.registry.ready:
            log.info("serving %s on port %d", ",".join(self.registry.manifest),
                     self.server.server_address[1])
        else:
            log.error("load failures, health stays negative: %s", self.registry.errors)
        try:
            thread.join()
        except KeyboardInterrupt:
            self.server.shutdown()
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnhandler")
    parser.add_argument("--bundle-root", required=True)
    parser.add_argument("--listen-port", type=int, required=True)
    parser.add_argument("--gateway", required=True, help="host:port of the platform gateway")
    parser.add_argument("--merger", required=True, help="URL of the merger endpoint")
    parser.add_argument("--internal-set", required=True, help="comma-separated CIDRs/hosts")
    parser.add_argument("--workers", type=int, default=4, help="request worker threads")
    parser.add_argument(
        "--detect-sockets",
        action="store_true",
        help="also detect blocking calls made without the SDK (raw socket tier)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return HandlerRuntime(args).run_forever()
