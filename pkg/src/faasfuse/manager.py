"""Instance lifecycle: deploy, health gate, export, drain, terminate, RSS.

Every instance walks Starting -> Healthy -> Draining -> Terminated, with the
single shortcut Starting -> Terminated for a failed health gate. The registry
serializes mutations; reads return snapshots.
"""

from __future__ import annotations

import itertools
import logging
import os
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .bundles import Bundle, copy_bundle, load_bundle
from .config import PlatformConfig
from .errors import DeployError, HealthGateError, LifecycleError
from .netutil import allocate_port, http_request, port_is_free
from .sandbox import SandboxBackend, SandboxHandle
from .wire import ENV_HOP_DELAY_MS, ENV_INSTANCE_ID, HEALTH_PATH

log = logging.getLogger(__name__)


class InstanceState(Enum):
    STARTING = "starting"
    HEALTHY = "healthy"
    DRAINING = "draining"
    TERMINATED = "terminated"


_LEGAL_TRANSITIONS = {
    (InstanceState.STARTING, InstanceState.HEALTHY),
    (InstanceState.STARTING, InstanceState.TERMINATED),
    (InstanceState.HEALTHY, InstanceState.DRAINING),
    (InstanceState.DRAINING, InstanceState.TERMINATED),
}


@dataclass
class InstanceSpec:
    bundle: Bundle
    env: dict[str, str] = field(default_factory=dict)
    listen_host: str = "127.0.0.1"
    listen_port: int | None = None  # None = pick a free ephemeral port
    health_path: str = HEALTH_PATH
    hop_delay_ms: int = 0


@dataclass
class FunctionInstance:
    """A running sandbox hosting one or more functions."""

    id: str
    host: str
    port: int
    manifest: tuple[str, ...]
    state: InstanceState
    workdir: Path
    env: dict[str, str]
    started_at: float
    handle: SandboxHandle | None = None
    health_path: str = HEALTH_PATH
    hop_delay_ms: int = 0

    @property
    def hosted(self) -> frozenset[str]:
        return frozenset(self.manifest)

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    @property
    def bundle_dir(self) -> Path:
        return self.workdir / "bundle"


class InstanceRegistry:
    """Shared instance table: concurrent reads, serialized mutations."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._instances: dict[str, FunctionInstance] = {}

    def register(self, instance: FunctionInstance) -> None:
        with self._lock:
            for other in self._instances.values():
                if other.state is not InstanceState.TERMINATED and other.address == instance.address:
                    raise DeployError(
                        f"address {instance.host}:{instance.port} already used by {other.id}"
                    )
            if instance.id in self._instances:
                raise DeployError(f"duplicate instance id {instance.id}")
            self._instances[instance.id] = instance

    def unregister(self, instance_id: str) -> None:
        with self._lock:
            self._instances.pop(instance_id, None)

    def transition(self, instance: FunctionInstance, new_state: InstanceState) -> None:
        with self._lock:
            if (instance.state, new_state) not in _LEGAL_TRANSITIONS:
                raise LifecycleError(
                    f"{instance.id}: illegal transition {instance.state.value} -> {new_state.value}"
                )
            instance.state = new_state

    def get(self, instance_id: str) -> FunctionInstance | None:
        with self._lock:
            return self._instances.get(instance_id)

    def instances(self) -> list[FunctionInstance]:
        with self._lock:
            return list(self._instances.values())

    def live_instances(self) -> list[FunctionInstance]:
        with self._lock:
            return [i for i in self._instances.values() if i.state is not InstanceState.TERMINATED]

    def live_instance_for_function(self, function: str) -> FunctionInstance | None:
        with self._lock:
            for inst in self._instances.values():
                if inst.state is not InstanceState.TERMINATED and function in inst.hosted:
                    return inst
        return None

    def live_instance_at(self, host: str, port: int) -> FunctionInstance | None:
        with self._lock:
            for inst in self._instances.values():
                if inst.state is not InstanceState.TERMINATED and inst.address == (host, port):
                    return inst
        return None


@dataclass(frozen=True)
class RssSample:
    instance_id: str
    rss_bytes: int
    flagged: bool  # instance record is live but the process is gone


class RuntimeManager:
    """Owns sandboxes and their bundles on behalf of the platform."""

    def __init__(
        self,
        backend: SandboxBackend,
        registry: InstanceRegistry,
        config: PlatformConfig,
        state_dir: Path,
    ):
        self.backend = backend
        self.registry = registry
        self.config = config
        self.state_dir = Path(state_dir)
        self.gateway_address: tuple[str, int] = ("127.0.0.1", 0)
        self.merger_url: str = ""
        self._seq = itertools.count(1)
        self._export_seq = itertools.count(1)

    def set_endpoints(self, gateway_address: tuple[str, int], merger_url: str) -> None:
        """Wire the addresses handed to every sandbox; call once the gateway is bound."""
        self.gateway_address = gateway_address
        self.merger_url = merger_url

    # -- deploy ---------------------------------------------------------------

    def deploy(self, spec: InstanceSpec) -> FunctionInstance:
        bundle = load_bundle(spec.bundle.root)  # re-validate: reject before spawn
        instance_id = f"i-{next(self._seq):04d}-{uuid.uuid4().hex[:6]}"
        workdir = self.state_dir / "instances" / instance_id
        workdir.mkdir(parents=True)
        copy_bundle(bundle, workdir / "bundle")

        if spec.listen_port is None:
            port = allocate_port(spec.listen_host)
        else:
            if not port_is_free(spec.listen_host, spec.listen_port):
                raise DeployError(f"port in use: {spec.listen_host}:{spec.listen_port}")
            port = spec.listen_port

        env = dict(os.environ)
        env.update(spec.env)
        env[ENV_INSTANCE_ID] = instance_id
        env[ENV_HOP_DELAY_MS] = str(spec.hop_delay_ms)
        env["PYTHONDONTWRITEBYTECODE"] = "1"

        instance = FunctionInstance(
            id=instance_id,
            host=spec.listen_host,
            port=port,
            manifest=bundle.manifest,
            state=InstanceState.STARTING,
            workdir=workdir,
            env=dict(spec.env),
            started_at=time.time(),
            health_path=spec.health_path,
            hop_delay_ms=spec.hop_delay_ms,
        )
        self.registry.register(instance)
        argv = list(self.config.runtime_cmd) + [
            "--bundle-root", str(instance.bundle_dir),
            "--listen-port", str(port),
            "--gateway", f"{self.gateway_address[0]}:{self.gateway_address[1]}",
            "--merger", self.merger_url or "http://127.0.0.1:0/merge",
            "--internal-set", self.config.internal_addresses().spec_string(),
        ]
        try:
            instance.handle = self.backend.spawn(argv, cwd=workdir, env=env)
        except Exception as exc:
            self.registry.unregister(instance_id)
            shutil.rmtree(workdir, ignore_errors=True)
            raise DeployError(f"sandbox spawn failed: {exc}") from exc
        log.info("deployed %s hosting %s on %s:%d", instance_id, bundle.manifest, spec.listen_host, port)
        return instance

    # -- health gate ----------------------------------------------------------

    def await_healthy(self, instance: FunctionInstance, timeout_ms: int | None = None) -> FunctionInstance:
        if instance.state is not InstanceState.STARTING:
            raise LifecycleError(f"{instance.id}: await_healthy in state {instance.state.value}")
        timeout_ms = self.config.health_timeout_ms if timeout_ms is None else timeout_ms
        poll_s = self.config.health_poll_ms / 1000.0
        deadline = time.monotonic() + timeout_ms / 1000.0
        failure = "health gate timeout"
        while time.monotonic() < deadline:
            if instance.handle is not None and not self.backend.alive(instance.handle):
                failure = "sandbox process exited during startup"
                break
            try:
                reply = http_request("GET", instance.host, instance.port, instance.health_path, timeout=1.0)
                if reply.status == 200:
                    self.registry.transition(instance, InstanceState.HEALTHY)
                    return instance
            except OSError:
                pass  # not listening yet
            time.sleep(poll_s)
        if instance.handle is not None:
            self.backend.kill(instance.handle)
        self.registry.transition(instance, InstanceState.TERMINATED)
        raise HealthGateError(f"{instance.id}: {failure} after {timeout_ms} ms")

    # -- export ---------------------------------------------------------------

    def export_bundle(self, instance: FunctionInstance, dest: Path | None = None) -> Bundle:
        if instance.state not in (InstanceState.HEALTHY, InstanceState.DRAINING):
            raise LifecycleError(f"{instance.id}: export in state {instance.state.value}")
        if dest is None:
            dest = self.state_dir / "exports" / f"{instance.id}-{next(self._export_seq):03d}"
        return copy_bundle(load_bundle(instance.bundle_dir), dest)

    # -- drain & terminate ----------------------------------------------------

    def drain_and_terminate(
        self,
        instance: FunctionInstance,
        drain_timeout_ms: int | None = None,
        inflight_count: Callable[[str], int] | None = None,
    ) -> None:
        if instance.state is InstanceState.HEALTHY:
            self.registry.transition(instance, InstanceState.DRAINING)
        elif instance.state is not InstanceState.DRAINING:
            raise LifecycleError(f"{instance.id}: drain in state {instance.state.value}")
        timeout_ms = self.config.drain_timeout_ms if drain_timeout_ms is None else drain_timeout_ms
        deadline = time.monotonic() + timeout_ms / 1000.0
        if inflight_count is not None:
            while inflight_count(instance.id) > 0 and time.monotonic() < deadline:
                time.sleep(0.01)
        if instance.handle is not None:
            self.backend.kill(instance.handle)
        self.registry.transition(instance, InstanceState.TERMINATED)
        log.info("terminated %s", instance.id)

    def terminate_all(self, inflight_count: Callable[[str], int] | None = None) -> None:
        for instance in self.registry.live_instances():
            if instance.state is InstanceState.STARTING:
                if instance.handle is not None:
                    self.backend.kill(instance.handle)
                self.registry.transition(instance, InstanceState.TERMINATED)
            else:
                self.drain_and_terminate(instance, drain_timeout_ms=0, inflight_count=inflight_count)

    # -- measurement ----------------------------------------------------------

    def measure_rss(self) -> list[RssSample]:
        samples = []
        for instance in self.registry.live_instances():
            rss = self.backend.rss_bytes(instance.handle) if instance.handle else None
            if rss is None:
                samples.append(RssSample(instance.id, 0, flagged=True))
            else:
                samples.append(RssSample(instance.id, rss, flagged=False))
        return samples
