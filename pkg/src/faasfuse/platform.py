"""Composition root: wires router, manager, merger, and gateway together."""

from __future__ import annotations

import logging
import shutil
import tempfile
import threading
from pathlib import Path

from .bundles import create_bundle, unpack_function_dir
from .config import PlatformConfig
from .core import InstanceRef, Router
from .errors import DeployError
from .gateway import GatewayServer, InflightTracker
from .manager import FunctionInstance, InstanceRegistry, InstanceSpec, RuntimeManager
from .merger import Merger
from .netutil import HttpReply, http_request
from .sandbox import make_backend
from .wire import MERGE_PATH

log = logging.getLogger(__name__)


class Platform:
    """One in-process FaaS platform: gateway, registry, merger, sandboxes."""

    def __init__(self, config: PlatformConfig | None = None, bundle_hook=None):
        self.config = config or PlatformConfig()
        if self.config.state_dir:
            self.state_dir = Path(self.config.state_dir)
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._owns_state_dir = False
        else:
            self.state_dir = Path(tempfile.mkdtemp(prefix="faasfuse-"))
            self._owns_state_dir = True

        self.router = Router()
        self.inflight = InflightTracker()
        self.registry = InstanceRegistry()
        self.manager = RuntimeManager(
            backend=make_backend(self.config.sandbox_backend),
            registry=self.registry,
            config=self.config,
            state_dir=self.state_dir,
        )
        self.merger = Merger(
            manager=self.manager,
            router=self.router,
            event_log_path=self.state_dir / "merge-events.jsonl",
            enabled=self.config.merger_enabled,
            inflight_count=self.inflight.count,
            bundle_hook=bundle_hook,
        )
        self._server: GatewayServer | None = None
        self._server_thread: threading.Thread | None = None
        self._deploy_lock = threading.Lock()
        self._staging_seq = 0

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> "Platform":
        self._server = GatewayServer(self.config.listen_host, self.config.listen_port, self)
        host, port = self._server.server_address[:2]
        self.manager.set_endpoints((host, port), f"http://{host}:{port}{MERGE_PATH}")
        self._server_thread = threading.Thread(
            target=self._server.serve_forever, name="gateway-http", daemon=True
        )
        self._server_thread.start()
        self.merger.start()
        log.info("platform listening on %s:%d (merger %s)", host, port,
                 "enabled" if self.config.merger_enabled else "disabled")
        return self

    def stop(self, cleanup_state: bool = True) -> None:
        self.merger.stop()
        self.manager.terminate_all(inflight_count=self.inflight.count)
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if cleanup_state and self._owns_state_dir:
            shutil.rmtree(self.state_dir, ignore_errors=True)

    def __enter__(self) -> "Platform":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("platform not started")
        return self._server.server_address[:2]

    @property
    def merge_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}{MERGE_PATH}"

    # -- deployment ---------------------------------------------------------------

    def deploy_function(
        self,
        name: str,
        source_dir: Path | None = None,
        archive: bytes | None = None,
        env: dict[str, str] | None = None,
        hop_delay_ms: int = 0,
    ) -> FunctionInstance:
        """Deploy one function behind its own instance and route to it."""
        with self._deploy_lock:
            if name in self.router.current().entries:
                raise DeployError(f"function already deployed: {name}")
            self._staging_seq += 1
            staging = self.state_dir / "staging" / f"{name}-{self._staging_seq:03d}"
            function_dir = staging / "src" / name
            if archive is not None:
                unpack_function_dir(archive, function_dir)
            elif source_dir is not None:
                shutil.copytree(source_dir, function_dir)
            else:
                raise DeployError("deploy needs a source directory or an archive")
            bundle = create_bundle(staging / "bundle", {name: function_dir})
            instance = self.manager.deploy(
                InstanceSpec(bundle=bundle, env=env or {}, hop_delay_ms=hop_delay_ms)
            )
            self.manager.await_healthy(instance)
            self.router.add(name, InstanceRef(instance.id, instance.host, instance.port))
            return instance

    # -- client + introspection -----------------------------------------------------

    def invoke(self, name: str, body: bytes = b"", timeout: float = 120.0) -> HttpReply:
        host, port = self.address
        return http_request("POST", host, port, f"/fn/{name}", body, timeout=timeout)

    def stats(self) -> dict:
        instances = [
            {
                "id": inst.id,
                "host": inst.host,
                "port": inst.port,
                "functions": list(inst.manifest),
                "state": inst.state.value,
                "started_at": inst.started_at,
            }
            for inst in self.registry.live_instances()
        ]
        table = self.router.current()
        return {
            "instances": instances,
            "routing": {
                "generation": table.generation,
                "entries": {
                    fn: {"instance": ref.instance_id, "host": ref.host, "port": ref.port}
                    for fn, ref in table.entries.items()
                },
            },
            "rss": [
                {"instance": s.instance_id, "bytes": s.rss_bytes, "flagged": s.flagged}
                for s in self.manager.measure_rss()
            ],
            "merge_events": [e.to_record() for e in self.merger.events()],
        }
