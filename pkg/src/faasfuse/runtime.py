"""Built-in sandbox runtime: loads a bundle and serves its functions.

Launched by the process sandbox backend as::

    python -m faasfuse.runtime --bundle-root DIR --listen-port N \
        --gateway HOST:PORT --merger URL --internal-set CIDRS

Endpoints: ``GET /health`` turns 200 only once every entry module in the
manifest has loaded; ``POST /`` dispatches on the ``X-Function-Name`` header.
Function code calls colocated functions in-process and remote ones through
the gateway via the injected ``faas_sdk`` module.

This runtime performs no synchronous-call detection; fusion requests come
from elsewhere (a scripted stream, or a detecting runtime that replaces this
one behind the same spawn contract).
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import logging
import os
import re
import sys
import threading
import time
import types
from concurrent.futures import Future, ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .netutil import http_request, parse_hostport
from .wire import DISPATCH_HEADER, ENV_HOP_DELAY_MS, HEALTH_PATH, SDK_MODULE

log = logging.getLogger("faasfuse.runtime")

MANIFEST_NAME = "manifest"
ENTRY_MODULE = "fn.py"


class InvokeError(RuntimeError):
    """A remote invocation failed; propagated into the calling handler."""


class Request:
    """What a function handler receives."""

    __slots__ = ("function", "body", "headers")

    def __init__(self, function: str, body: bytes, headers: dict[str, str] | None = None):
        self.function = function
        self.body = body
        self.headers = headers or {}


def coerce_response(result) -> bytes:
    if isinstance(result, bytes):
        return result
    if isinstance(result, str):
        return result.encode("utf-8")
    if result is None:
        return b""
    # canonical form so responses stay deterministic across runs
    return json.dumps(result, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _load_entry_module(name: str, fn_dir: Path, index: int):
    """Import ``fn.py`` as a submodule of a per-function synthetic package.

    Each function directory becomes its own package namespace so support
    modules with the same filename in two fused functions cannot shadow
    each other (entry modules use ``from . import helper``).
    """
    safe = re.sub(r"[^0-9a-zA-Z_]", "_", name)
    pkg_name = f"faasfn{index}_{safe}"
    package = types.ModuleType(pkg_name)
    package.__path__ = [str(fn_dir)]
    sys.modules[pkg_name] = package
    spec = importlib.util.spec_from_file_location(f"{pkg_name}.fn", fn_dir / ENTRY_MODULE)
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    handler = getattr(module, "handler", None)
    if not callable(handler):
        raise AttributeError(f"entry module of {name!r} exports no handler()")
    return handler


class LocalRegistry:
    """Function-name -> handler map; read-only once loading finished."""

    def __init__(self) -> None:
        self.handlers: dict[str, object] = {}
        self.errors: dict[str, str] = {}
        self.manifest: tuple[str, ...] = ()
        self._ready = False

    def load(self, bundle_root: Path) -> None:
        manifest_path = bundle_root / MANIFEST_NAME
        names = [ln.strip() for ln in manifest_path.read_text("utf-8").splitlines() if ln.strip()]
        self.manifest = tuple(names)
        for index, name in enumerate(names):
            try:
                self.handlers[name] = _load_entry_module(name, bundle_root / name, index)
            except BaseException as exc:  # import-time failures of user code
                log.error("failed to load %s: %s", name, exc)
                self.errors[name] = f"{type(exc).__name__}: {exc}"
        self._ready = not self.errors and len(self.handlers) == len(names)

    @property
    def ready(self) -> bool:
        return self._ready


class Sdk:
    """Implementation behind the injected ``faas_sdk`` module."""

    def __init__(self, registry: LocalRegistry, gateway: tuple[str, int], hop_delay_ms: int):
        self.registry = registry
        self.gateway = gateway
        self.hop_delay_ms = hop_delay_ms
        self._pool = ThreadPoolExecutor(max_workers=8, thread_name_prefix="sdk-async")

    def _hop(self) -> None:
        if self.hop_delay_ms > 0:
            time.sleep(self.hop_delay_ms / 1000.0)

    def _call_local(self, name: str, payload: bytes) -> bytes:
        handler = self.registry.handlers[name]
        return coerce_response(handler(Request(name, payload)))

    def _call_remote(self, name: str, payload: bytes) -> bytes:
        self._hop()  # stands in for the remote-invocation network + scheduling cost
        host, port = self.gateway
        reply = http_request("POST", host, port, f"/fn/{name}", payload, timeout=120.0)
        if reply.status >= 300:
            raise InvokeError(f"remote invocation of {name} failed: {reply.status}")
        return reply.body

    def invoke(self, name: str, payload: bytes | str = b"", mode: str = "sync"):
        """Call another function; in-process when colocated.

        Sync returns the response bytes; async returns a Future ticket that
        resolves after dispatch completes.
        """
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        mode = mode.lower()
        if mode not in ("sync", "async"):
            raise ValueError(f"invoke mode must be sync or async, got {mode!r}")
        local = name in self.registry.handlers
        if mode == "sync":
            return self._call_local(name, payload) if local else self._call_remote(name, payload)
        if local:
            return self._pool.submit(self._call_local, name, payload)
        return self._pool.submit(self._swallow_remote, name, payload)

    def _swallow_remote(self, name: str, payload: bytes):
        try:
            return self._call_remote(name, payload)
        except Exception as exc:  # fire and forget: failures are logged, not raised
            log.warning("async invocation of %s failed: %s", name, exc)
            return None

    def install(self) -> types.ModuleType:
        module = types.ModuleType(SDK_MODULE)
        module.invoke = self.invoke
        module.Future = Future
        sys.modules[SDK_MODULE] = module
        return module


class RuntimeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "faasfuse-runtime"

    def log_message(self, fmt, *args):  # per-request stderr noise is not useful here
        pass

    def _send(self, status: int, body: bytes, content_type: str = "application/octet-stream") -> None:
        try:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass  # caller disconnected mid-response

    def do_GET(self):
        registry: LocalRegistry = self.server.registry
        if self.path == HEALTH_PATH:
            if registry.ready:
                self._send(200, b'{"ready":true}', "application/json")
            else:
                body = json.dumps({"ready": False, "errors": registry.errors}).encode()
                self._send(503, body, "application/json")
            return
        self._send(404, b"not found")

    def do_POST(self):
        registry: LocalRegistry = self.server.registry
        if not registry.ready:
            self._send(503, b"instance not ready")
            return
        name = self.headers.get(DISPATCH_HEADER)
        if not name:
            self._send(400, f"missing {DISPATCH_HEADER} header".encode())
            return
        handler = registry.handlers.get(name)
        if handler is None:
            self._send(404, f"function not hosted here: {name}".encode())
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            result = coerce_response(handler(Request(name, body, dict(self.headers))))
        except Exception as exc:
            log.exception("handler %s raised", name)
            self._send(500, f"function {name} failed: {type(exc).__name__}: {exc}".encode())
            return
        self._send(200, result)


class RuntimeServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, port: int, registry: LocalRegistry):
        super().__init__(("127.0.0.1", port), RuntimeHandler)
        self.registry = registry

    def handle_error(self, request, client_address):
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionResetError, BrokenPipeError)):
            return
        log.exception("error handling request from %s", client_address)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faasfuse-runtime")
    parser.add_argument("--bundle-root", required=True)
    parser.add_argument("--listen-port", type=int, required=True)
    parser.add_argument("--gateway", required=True, help="host:port of the platform gateway")
    parser.add_argument("--merger", required=True, help="URL of the merger endpoint")
    parser.add_argument("--internal-set", required=True, help="comma-separated CIDRs/hosts")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)

    registry = LocalRegistry()
    sdk = Sdk(
        registry,
        parse_hostport(args.gateway),
        hop_delay_ms=int(os.environ.get(ENV_HOP_DELAY_MS, "0")),
    )
    sdk.install()

    # Bind before loading so the health endpoint answers (negatively) during
    # slow imports instead of refusing connections.
    server = RuntimeServer(args.listen_port, registry)
    thread = threading.Thread(target=server.serve_forever, name="runtime-http", daemon=True)
    thread.start()
    registry.load(Path(args.bundle_root))
    if registry.ready:
        log.info("serving %s on port %d", ",".join(registry.manifest), args.listen_port)
    else:
        log.error("load failures, health stays negative: %s", registry.errors)
    try:
        thread.join()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
