"""The spawned runtime process: health gating, dispatch, stats, worker pool."""

from __future__ import annotations

import http.client
import json
import socket
import subprocess
import sys
import threading
import time

import pytest

from tests.conftest import ECHO_CODE, write_bundle

SLOW_CODE = """\
import time

def handler(request):
    time.sleep(0.3)
    return b"slow-done"
"""


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def request(port, method="POST", path="/", body=b"", headers=None, timeout=10.0):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=timeout)
    try:
        conn.request(method, path, body=body, headers=headers or {})
        resp = conn.getresponse()
        return resp.status, resp.read()
    finally:
        conn.close()


def spawn(bundle_root, port, extra=()):
    return subprocess.Popen(
        [
            sys.executable, "-m", "fnhandler",
            "--bundle-root", str(bundle_root),
            "--listen-port", str(port),
            "--gateway", "127.0.0.1:1",
            "--merger", "http://127.0.0.1:1/merge",
            "--internal-set", "127.0.0.0/8",
            *extra,
        ],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        env={"PATH": "/usr/bin:/bin", "FAAS_INSTANCE_ID": "srv-test"},
    )


def wait_health(port, expect=200, timeout=10.0):
    deadline = time.monotonic() + timeout
    last = None
    while time.monotonic() < deadline:
        try:
            status, body = request(port, "GET", "/health")
            last = status
            if status == expect:
                return body
        except OSError:
            pass
        time.sleep(0.05)
    raise AssertionError(f"health never became {expect}, last {last}")


@pytest.fixture
def served(tmp_path):
    root = write_bundle(tmp_path / "b", {"alpha": ECHO_CODE, "slow": SLOW_CODE})
    port = free_port()
    proc = spawn(root, port)
    try:
        wait_health(port)
        yield port
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_dispatch_and_errors(served):
    status, body = request(served, body=b"hi", headers={"X-Function-Name": "alpha"})
    assert (status, body) == (200, b"echo:alpha:hi")
    assert request(served)[0] == 400  # missing dispatch header
    assert request(served, headers={"X-Function-Name": "ghost"})[0] == 404


def test_handler_exception_keeps_instance_alive(tmp_path):
    root = write_bundle(
        tmp_path / "b",
        {"ok": ECHO_CODE, "boom": "def handler(request):\n    raise ValueError('pop')\n"},
    )
    port = free_port()
    proc = spawn(root, port)
    try:
        wait_health(port)
        status, body = request(port, headers={"X-Function-Name": "boom"})
        assert status == 500
        assert b"boom" in body
        assert request(port, body=b"x", headers={"X-Function-Name": "ok"})[0] == 200
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_broken_bundle_keeps_health_negative(tmp_path):
    root = write_bundle(tmp_path / "b", {"dead": "raise ImportError('no')\n"})
    port = free_port()
    proc = spawn(root, port)
    try:
        body = wait_health(port, expect=503)
        assert b"dead" in body
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_stats_shape(served):
    status, body = request(served, "GET", "/stats")
    assert status == 200
    doc = json.loads(body)
    assert doc["functions"] == ["alpha", "slow"]
    assert doc["ready"] is True
    assert doc["detections_emitted"] == 0
    assert "connects_total" in doc["sockets"]
    assert doc["sdk_calls"] == []


def test_single_worker_serializes_requests(tmp_path):
    root = write_bundle(tmp_path / "b", {"slow": SLOW_CODE})
    port = free_port()
    proc = spawn(root, port, extra=("--workers", "1"))
    try:
        wait_health(port)
        done = []

        def one():
            request(port, body=b"", headers={"X-Function-Name": "slow"}, timeout=15)
            done.append(time.perf_counter())

        started = time.perf_counter()
        threads = [threading.Thread(target=one) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        # with one worker the second 300 ms request cannot overlap the first
        assert max(done) - started >= 0.55
    finally:
        proc.terminate()
        proc.wait(timeout=5)
