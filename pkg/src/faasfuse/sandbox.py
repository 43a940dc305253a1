"""Sandbox backends: how instance runtimes are actually executed.

The paper-equivalent container runtime is abstracted behind
:class:`SandboxBackend`; the mandatory implementation runs one OS process
per instance with a private working directory and a loopback port. A
container-based backend is an extension point, not part of this artifact.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Protocol

import psutil

from .errors import ConfigError


@dataclass
class SandboxHandle:
    pid: int
    popen: subprocess.Popen
    logfile: IO[bytes]


class SandboxBackend(Protocol):
    def spawn(self, argv: list[str], cwd: Path, env: dict[str, str]) -> SandboxHandle: ...

    def alive(self, handle: SandboxHandle) -> bool: ...

    def kill(self, handle: SandboxHandle, grace_s: float = 2.0) -> None: ...

    def rss_bytes(self, handle: SandboxHandle) -> int | None: ...


class ProcessSandboxBackend:
    """One sandbox = one OS process, stdout/stderr captured in its workdir."""

    def spawn(self, argv: list[str], cwd: Path, env: dict[str, str]) -> SandboxHandle:
        cwd = Path(cwd)
        cwd.mkdir(parents=True, exist_ok=True)
        logfile = open(cwd / "sandbox.log", "ab")
        try:
            popen = subprocess.Popen(
                argv,
                cwd=str(cwd),
                env=env,
                stdout=logfile,
                stderr=subprocess.STDOUT,
                stdin=subprocess.DEVNULL,
            )
        except Exception:
            logfile.close()
            raise
        return SandboxHandle(pid=popen.pid, popen=popen, logfile=logfile)

    def alive(self, handle: SandboxHandle) -> bool:
        return handle.popen.poll() is None

    def kill(self, handle: SandboxHandle, grace_s: float = 2.0) -> None:
        popen = handle.popen
        if popen.poll() is None:
            popen.terminate()
            try:
                popen.wait(timeout=grace_s)
            except subprocess.TimeoutExpired:
                popen.kill()
                popen.wait()
        if not handle.logfile.closed:
            handle.logfile.close()

    def rss_bytes(self, handle: SandboxHandle) -> int | None:
        if not self.alive(handle):
            return None
        try:
            return psutil.Process(handle.pid).memory_info().rss
        except (psutil.NoSuchProcess, psutil.ZombieProcess, psutil.AccessDenied):
            return None


def make_backend(name: str) -> SandboxBackend:
    if name == "process":
        return ProcessSandboxBackend()
    raise ConfigError(f"unknown sandbox backend: {name!r} (only 'process' is built in)")
