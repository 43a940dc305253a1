"""The in-sandbox SDK: function-to-function calls with transparent inlining.

Colocated callees run in-process with no socket. Remote callees go through
the gateway; each remote call is observed with its exact mode, which is
what makes fusion detection deterministic for SDK traffic.
"""

from __future__ import annotations

import http.client
import json
import logging
import sys
import threading
import time
import types
from concurrent.futures import Future, ThreadPoolExecutor

from .contract import (
    DISPATCH_HEADER,
    INSTANCE_ADDRESS_HEADER,
    INVOKE_PATH_PREFIX,
    SDK_MODULE,
    InternalAddressSet,
)
from .loader import LocalRegistry, Request
from .monitor import ObservationSink, OutboundObservation, context

log = logging.getLogger(__name__)


class InvokeError(RuntimeError):
    """A remote invocation returned an error; raised into the caller."""


def coerce_response(result) -> bytes:
    if isinstance(result, bytes):
        return result
    if isinstance(result, str):
        return result.encode("utf-8")
    if result is None:
        return b""
    return json.dumps(result, sort_keys=True, separators=(",", ":")).encode("utf-8")


class CallCounters:
    """Per (caller, target, transport, mode) invocation counts for /stats."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: dict[tuple[str, str, str, str], int] = {}

    def bump(self, caller: str, target: str, transport: str, mode: str) -> None:
        with self._lock:
            key = (caller, target, transport, mode)
            self._counts[key] = self._counts.get(key, 0) + 1

    def snapshot(self) -> list[dict]:
        with self._lock:
            return [
                {"caller": c, "target": t, "transport": tr, "mode": m, "count": n}
                for (c, t, tr, m), n in sorted(self._counts.items())
            ]


class Sdk:
    def __init__(
        self,
        registry: LocalRegistry,
        gateway: tuple[str, int],
        internal: InternalAddressSet,
        observations: ObservationSink,
        hop_delay_ms: int = 0,
        pool_size: int = 8,
    ):
        self.registry = registry
        self.gateway = gateway
        self.internal = internal
        self.observations = observations
        self.hop_delay_ms = hop_delay_ms
        self.counters = CallCounters()
        self._pool = ThreadPoolExecutor(max_workers=pool_size, thread_name_prefix="sdk-async")

    # -- public entry point -------------------------------------------------------

    def invoke(self, name: str, payload: bytes | str = b"", mode: str = "sync"):
        """Call ``name``: in-process when colocated, via the gateway otherwise.

        Sync returns response bytes (remote failures raise); async returns a
        Future ticket and never raises into the caller.
        """
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        mode = mode.lower()
        if mode not in ("sync", "async"):
            raise ValueError(f"invoke mode must be sync or async, got {mode!r}")
        issuer = context.function or "?"
        if name in self.registry.handlers:
            self.counters.bump(issuer, name, "local", mode)
            if mode == "sync":
                return self._call_local(name, payload)
            return self._pool.submit(self._call_local_quietly, name, payload)
        self.counters.bump(issuer, name, "remote", mode)
        if mode == "sync":
            return self._call_remote(name, payload, issuer, blocking=True)
        return self._pool.submit(self._call_remote_quietly, name, payload, issuer)

    # -- local (inlined) ------------------------------------------------------------

    def _call_local(self, name: str, payload: bytes) -> bytes:
        handler = self.registry.handlers[name]
        previous = context.function
        context.function = name  # the callee issues its own downstream calls
        try:
            return coerce_response(handler(Request(name, payload)))
        finally:
            context.function = previous

    def _call_local_quietly(self, name: str, payload: bytes):
        try:
            return self._call_local(name, payload)
        except Exception as exc:
            log.warning("async local invocation of %s failed: %s", name, exc)
            return None

    # -- remote (via gateway) ----------------------------------------------------------

    def _call_remote(self, name: str, payload: bytes, issuer: str, blocking: bool) -> bytes:
        if self.hop_delay_ms > 0:
            time.sleep(self.hop_delay_ms / 1000.0)  # models invocation + network cost
        host, port = self.gateway
        context.in_sdk_call = True
        try:
            conn = http.client.HTTPConnection(host, port, timeout=120.0)
            try:
                conn.request("POST", f"{INVOKE_PATH_PREFIX}{name}", body=payload,
                             headers={DISPATCH_HEADER: name})
                resp = conn.getresponse()
                body = resp.read()
                served_by = resp.getheader(INSTANCE_ADDRESS_HEADER)
            finally:
                conn.close()
        finally:
            context.in_sdk_call = False
        self._observe(served_by, issuer, blocking)
        if resp.status >= 300:
            raise InvokeError(f"remote invocation of {name} failed: {resp.status}")
        return body

    def _call_remote_quietly(self, name: str, payload: bytes, issuer: str):
        try:
            return self._call_remote(name, payload, issuer, blocking=False)
        except Exception as exc:
            log.warning("async invocation of %s failed: %s", name, exc)
            return None

    def _observe(self, served_by: str | None, issuer: str, blocking: bool) -> None:
        if not served_by or ":" not in served_by:
            return
        host, _, port = served_by.rpartition(":")
        self.observations.record(
            OutboundObservation(
                host=host,
                port=int(port),
                blocking=blocking,
                function=issuer,
                observed_at_ms=int(time.time() * 1000),
            )
        )

    # -- wiring -----------------------------------------------------------------------

    def install(self) -> types.ModuleType:
        """Expose this SDK to user code as the ``faas_sdk`` module."""
        module = types.ModuleType(SDK_MODULE)
        module.invoke = self.invoke
        module.Future = Future
        sys.modules[SDK_MODULE] = module
        return module
