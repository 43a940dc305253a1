"""Fixtures: bundle builders and a stub gateway/merger for SDK tests."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest


def pytest_runtest_logreport(report):
    """One visible PASS/FAIL line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {verdict}: {report.nodeid.split('::')[-1]}", flush=True)

ECHO_CODE = """\
def handler(request):
    return b"echo:" + request.function.encode() + b":" + request.body
"""


def write_function(parent: Path, name: str, code: str = ECHO_CODE, support: dict[str, str] | None = None) -> Path:
    fdir = parent / name
    fdir.mkdir(parents=True)
    (fdir / "fn.py").write_text(code, "utf-8")
    for filename, content in (support or {}).items():
        (fdir / filename).write_text(content, "utf-8")
    return fdir


def write_bundle(root: Path, functions: dict[str, str]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for name, code in functions.items():
        write_function(root, name, code)
    (root / "manifest").write_text("".join(f"{n}\n" for n in functions), "utf-8")
    return root


class StubPlatform:
    """Fake gateway + merger: canned function responses, recorded merge intake.

    ``routes`` maps function name -> (response body, advertised instance
    address); the advertised address lands in the X-Instance-Address header
    exactly as the real gateway does.
    """

    def __init__(self):
        self.routes: dict[str, tuple[bytes, str]] = {}
        self.merge_requests: list[dict] = []
        self.invocations: list[str] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _reply(self, status, body, headers=()):
                self.send_response(status)
                for key, value in headers:
                    self.send_header(key, value)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                if self.path == "/merge":
                    with stub._lock:
                        stub.merge_requests.append(json.loads(body))
                    self._reply(200, b'{"status":"enqueued"}')
                    return
                if self.path.startswith("/fn/"):
                    name = self.path[4:]
                    with stub._lock:
                        stub.invocations.append(name)
                    if name not in stub.routes:
                        self._reply(404, b"unknown function")
                        return
                    reply_body, address = stub.routes[name]
                    self._reply(200, reply_body, headers=[("X-Instance-Address", address)])
                    return
                self._reply(404, b"nope")

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "StubPlatform":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def merger_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/merge"


@pytest.fixture
def stub_platform():
    stub = StubPlatform().start()
    yield stub
    stub.stop()
