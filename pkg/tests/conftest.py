"""Shared fixtures: fixture function code, bundles, and a manager factory."""

from __future__ import annotations

import textwrap
from pathlib import Path

import pytest


def pytest_runtest_logreport(report):
    """One visible PASS/FAIL line per acceptance criterion."""
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        verdict = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {verdict}: {name}", flush=True)

from faasfuse.bundles import create_bundle
from faasfuse.config import PlatformConfig
from faasfuse.manager import InstanceRegistry, RuntimeManager
from faasfuse.sandbox import ProcessSandboxBackend

ECHO_CODE = """\
def handler(request):
    return b"echo:" + request.function.encode() + b":" + request.body
"""

#: sleeps the number of milliseconds given in the (decimal ASCII) body
SLOW_CODE = """\
import time

def handler(request):
    time.sleep(int(request.body or b"0") / 1000.0)
    return b"slept:" + request.body
"""

STUCK_CODE = """\
import time

def handler(request):
    time.sleep(3600)
    return b"unreachable"
"""

BROKEN_CODE = """\
raise RuntimeError("this entry module cannot be imported")
"""

RAISING_CODE = """\
def handler(request):
    raise ValueError("boom from handler")
"""


def write_function(parent: Path, name: str, code: str = ECHO_CODE, support: dict[str, str] | None = None) -> Path:
    fdir = parent / name
    fdir.mkdir(parents=True)
    (fdir / "fn.py").write_text(textwrap.dedent(code), "utf-8")
    for filename, content in (support or {}).items():
        (fdir / filename).write_text(content, "utf-8")
    return fdir


def make_bundle(tmp_path: Path, functions: dict[str, str], tag: str = "bundle"):
    source = tmp_path / f"{tag}-src"
    source.mkdir()
    dirs = {name: write_function(source, name, code) for name, code in functions.items()}
    return create_bundle(tmp_path / tag, dirs)


@pytest.fixture
def echo_bundle(tmp_path):
    return make_bundle(tmp_path, {"alpha": ECHO_CODE})


@pytest.fixture
def manager(tmp_path):
    config = PlatformConfig(health_timeout_ms=8000)
    mgr = RuntimeManager(
        backend=ProcessSandboxBackend(),
        registry=InstanceRegistry(),
        config=config,
        state_dir=tmp_path / "state",
    )
    yield mgr
    mgr.terminate_all()
