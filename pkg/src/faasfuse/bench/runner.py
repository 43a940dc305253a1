"""Drives one benchmark run: boot platform, deploy app, load, record."""

from __future__ import annotations

import json
import logging
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..config import PlatformConfig, default_runtime_cmd
from ..netutil import http_request
from ..platform import Platform
from .apps import COMPUTE_DELAY_ENV, build_app, payload_for
from .loadgen import StatsSampler, run_open_loop
from .records import MergeMarker, RunRecord

log = logging.getLogger(__name__)


@dataclass
class BenchSettings:
    app: str = "tree"
    mode: str = "vanilla"  # vanilla | fusion
    requests: int = 1000
    rate: float = 5.0
    hop_delay_ms: int = 50
    compute_delay_ms: int = 10
    fusion_source: str = "scripted"  # scripted | detected
    fusion_delay_s: float = 5.0  # when the scripted detection stream starts
    runtime_cmd: list[str] = field(default_factory=default_runtime_cmd)
    health_timeout_ms: int = 10000
    drain_timeout_ms: int = 10000

    def validate(self) -> None:
        if self.mode not in ("vanilla", "fusion"):
            raise ValueError(f"mode must be vanilla or fusion, got {self.mode!r}")
        if self.fusion_source not in ("scripted", "detected"):
            raise ValueError(f"fusion source must be scripted or detected, got {self.fusion_source!r}")
        if self.requests <= 0 or self.rate <= 0:
            raise ValueError("requests and rate must be positive")


def run_benchmark(settings: BenchSettings, out: Path | None = None) -> RunRecord:
    settings.validate()
    staging = Path(tempfile.mkdtemp(prefix="bench-app-"))
    app = build_app(settings.app, staging)
    config = PlatformConfig(
        merger_enabled=settings.mode == "fusion",
        runtime_cmd=list(settings.runtime_cmd),
        health_timeout_ms=settings.health_timeout_ms,
        drain_timeout_ms=settings.drain_timeout_ms,
    )
    record = RunRecord(
        app=settings.app,
        mode=settings.mode,
        requests=settings.requests,
        rate=settings.rate,
        hop_delay_ms=settings.hop_delay_ms,
        compute_delay_ms=settings.compute_delay_ms,
        started_at_ms=0,
    )
    with Platform(config) as platform:
        env = {COMPUTE_DELAY_ENV: str(settings.compute_delay_ms)}
        for name, fdir in app.function_dirs.items():
            platform.deploy_function(
                name, source_dir=fdir, env=env, hop_delay_ms=settings.hop_delay_ms
            )
        host, port = platform.address

        record.started_at_ms = int(time.time() * 1000)
        t0_perf = time.perf_counter()
        sampler = StatsSampler(platform, t0_perf).start()

        stream: threading.Thread | None = None
        if settings.mode == "fusion" and settings.fusion_source == "scripted":
            stream = threading.Thread(
                target=_scripted_detection_stream,
                args=(platform, app, settings.fusion_delay_s),
                name="fusion-script",
                daemon=True,
            )
            stream.start()

        try:
            record.request_samples = run_open_loop(
                host, port, app.entrypoint,
                settings.requests, settings.rate, payload_for, t0_perf,
            )
            record.valid = len(record.request_samples) == settings.requests
        except OSError as exc:
            log.error("platform unreachable, aborting run: %s", exc)
            record.valid = False

        if stream is not None:
            stream.join(timeout=30)
        platform.merger.wait_idle(60)
        record.stat_samples = sampler.stop()
        record.merge_markers = [
            MergeMarker(
                rel_ms=event.completed_at_ms - record.started_at_ms,
                outcome=event.outcome.value,
                new_instance=event.new_instance,
                functions=tuple(event.hosted_a) + tuple(event.hosted_b),
            )
            for event in platform.merger.events()
        ]
    if out is not None:
        record.save(out)
    return record


def _scripted_detection_stream(platform: Platform, app, delay_s: float) -> None:
    """Stand-in for runtime detection: one fusion request per sync edge.

    Callee addresses are resolved against the live registry at submission
    time, exactly as a handler would observe them on the wire.
    """
    time.sleep(delay_s)
    host, port = platform.address
    for caller, callee in app.sync_edges():
        instance = platform.registry.live_instance_for_function(callee)
        if instance is None:
            continue
        body = json.dumps(
            {
                "caller": caller,
                "callee_ip": instance.host,
                "callee_port": instance.port,
                "observed_at_ms": int(time.time() * 1000),
            }
        ).encode()
        try:
            http_request("POST", host, port, "/merge", body, timeout=10.0)
        except OSError as exc:
            log.warning("scripted fusion request %s->%s failed: %s", caller, callee, exc)
        time.sleep(0.25)
