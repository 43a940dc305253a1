"""The merge pipeline: fuse two live instances into one combined sandbox.

On a resolved merge decision the worker exports both source bundles, merges
them identifier-preservingly, deploys the combined instance, gates on its
health, swaps routing for all involved functions in one generation bump,
and only then drains and terminates the originals. Any failure before the
routing swap aborts with the originals untouched.
"""

from __future__ import annotations

import json
import logging
import shutil
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from .bundles import Bundle, load_bundle, write_manifest
from .core import (
    AlreadyColocated,
    FusionRequest,
    InstanceRef,
    Merge,
    Router,
    UnknownCallee,
    UnknownCaller,
    resolve_fusion_request,
)
from .errors import BundleError, DeployError, HealthGateError, MergeError
from .manager import FunctionInstance, InstanceSpec, InstanceState, RuntimeManager

log = logging.getLogger(__name__)


def merge_bundles(a: Bundle, b: Bundle, dest: Path) -> Bundle:
    """Combine two bundles; manifests concatenate, directories never collide.

    Overlapping manifests mean the registry believes one function lives in
    two places at once; that is a bug upstream, never merged silently.
    """
    overlap = a.functions & b.functions
    if overlap:
        raise MergeError(f"functions hosted on both sides: {sorted(overlap)}")
    dest = Path(dest)
    dest.mkdir(parents=True)
    order = list(a.manifest) + list(b.manifest)
    for source in (a, b):
        for name in source.manifest:
            shutil.copytree(source.function_dir(name), dest / name)
    write_manifest(dest, order)
    return load_bundle(dest)


def merge_env(env_a: dict[str, str], env_b: dict[str, str]) -> dict[str, str]:
    """Union of both environments; conflicting keys abort the merge."""
    conflicts = sorted(
        key for key in env_a.keys() & env_b.keys() if env_a[key] != env_b[key]
    )
    if conflicts:
        raise MergeError(f"conflicting environment keys: {conflicts}")
    merged = dict(env_a)
    merged.update(env_b)
    return merged


class MergeOutcome(Enum):
    COMPLETED = "completed"
    ABORTED_HEALTH_FAILURE = "aborted_health_failure"
    ABORTED_STALE = "aborted_stale"


@dataclass(frozen=True)
class MergePlan:
    source_a: FunctionInstance
    source_b: FunctionInstance
    result_functions: tuple[str, ...]
    created_at_ms: int

    @classmethod
    def of(cls, a: FunctionInstance, b: FunctionInstance) -> "MergePlan":
        if a.id == b.id:
            raise MergeError(f"cannot merge {a.id} with itself")
        overlap = a.hosted & b.hosted
        if overlap:
            raise MergeError(f"functions hosted on both sides: {sorted(overlap)}")
        return cls(
            source_a=a,
            source_b=b,
            result_functions=tuple(a.manifest) + tuple(b.manifest),
            created_at_ms=int(time.time() * 1000),
        )


@dataclass(frozen=True)
class MergeEvent:
    source_a: str
    source_b: str
    hosted_a: tuple[str, ...]
    hosted_b: tuple[str, ...]
    new_instance: str | None
    outcome: MergeOutcome
    created_at_ms: int
    completed_at_ms: int
    reason: str = ""

    def to_record(self) -> dict:
        return {
            "source_a": self.source_a,
            "source_b": self.source_b,
            "hosted_a": list(self.hosted_a),
            "hosted_b": list(self.hosted_b),
            "new_instance": self.new_instance,
            "outcome": self.outcome.value,
            "created_at_ms": self.created_at_ms,
            "completed_at_ms": self.completed_at_ms,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class Ack:
    status: str
    detail: str = ""


@dataclass
class _QueuedMerge:
    caller_function: str
    callee_functions: frozenset[str]
    pair_key: frozenset[str]


class Merger:
    """Consumes fusion requests, serializes merges through one worker."""

    def __init__(
        self,
        manager: RuntimeManager,
        router: Router,
        event_log_path: Path,
        enabled: bool = True,
        inflight_count: Callable[[str], int] | None = None,
        bundle_hook: Callable[[Bundle], None] | None = None,
    ):
        self.manager = manager
        self.router = router
        self.registry = manager.registry
        self.config = manager.config
        self.internal = manager.config.internal_addresses()
        self.enabled = enabled
        self.inflight_count = inflight_count
        self.bundle_hook = bundle_hook  # test seam: mutate the merged bundle pre-deploy

        self.event_log_path = Path(event_log_path)
        self._events: list[MergeEvent] = []
        self._received: deque[tuple[dict, str]] = deque(maxlen=10000)

        self._lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._queue: deque[_QueuedMerge] = deque()
        self._active_pairs: set[frozenset[str]] = set()
        self._detection_counts: dict[frozenset[str], int] = {}
        self._running_pair: frozenset[str] | None = None
        self._merge_seq = 0
        self._worker: threading.Thread | None = None
        self._stop = False

    # -- intake ----------------------------------------------------------------

    def submit(self, req: FusionRequest) -> Ack:
        """Resolve one detection; queue a merge when it names two live instances."""
        ack = self._classify(req)
        self._received.append((req.__dict__ | {}, ack.status))
        return ack

    def _classify(self, req: FusionRequest) -> Ack:
        if not self.enabled:
            return Ack("disabled")
        if not self.internal.contains(req.callee_host):
            return Ack("dropped_external", f"{req.callee_host} outside the platform address set")
        decision = resolve_fusion_request(req, self.registry)
        if isinstance(decision, UnknownCallee):
            return Ack("unknown_callee", f"{decision.host}:{decision.port}")
        if isinstance(decision, UnknownCaller):
            return Ack("unknown_caller", decision.caller)
        if isinstance(decision, AlreadyColocated):
            return Ack("already_colocated", decision.instance_id)
        assert isinstance(decision, Merge)
        pair = frozenset({decision.instance_a.id, decision.instance_b.id})
        with self._lock:
            if pair in self._active_pairs:
                return Ack("coalesced")
            count = self._detection_counts.get(pair, 0) + 1
            self._detection_counts[pair] = count
            if count < self.config.fusion_threshold:
                return Ack("counted", f"{count}/{self.config.fusion_threshold}")
            self._active_pairs.add(pair)
            self._queue.append(
                _QueuedMerge(
                    caller_function=req.caller,
                    callee_functions=decision.instance_b.hosted,
                    pair_key=pair,
                )
            )
            self._wakeup.notify()
        return Ack("enqueued")

    # -- worker ----------------------------------------------------------------

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stop = False
        self._worker = threading.Thread(target=self._run, name="merge-worker", daemon=True)
        self._worker.start()

    def stop(self) -> None:
        with self._lock:
            self._stop = True
            self._wakeup.notify_all()
        if self._worker is not None:
            self._worker.join(timeout=60)
            self._worker = None

    def wait_idle(self, timeout_s: float = 60.0) -> bool:
        """Block until no merge is queued or running; False on timeout."""
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            with self._lock:
                if not self._queue and self._running_pair is None:
                    return True
            time.sleep(0.02)
        return False

    def _run(self) -> None:
        while True:
            with self._lock:
                while not self._queue and not self._stop:
                    self._wakeup.wait(timeout=0.5)
                if self._stop and not self._queue:
                    return
                item = self._queue.popleft()
                self._running_pair = item.pair_key
            try:
                self._process(item)
            except Exception:
                log.exception("merge worker failed on %s", item.pair_key)
            finally:
                with self._lock:
                    self._running_pair = None
                    self._active_pairs.discard(item.pair_key)
                    self._detection_counts.pop(item.pair_key, None)

    def _process(self, item: _QueuedMerge) -> None:
        # Re-resolve against the live registry: an instance merged away since
        # enqueue is replaced by whichever instance hosts its functions now.
        instance_a = self.registry.live_instance_for_function(item.caller_function)
        callee_fn = min(item.callee_functions)
        instance_b = self.registry.live_instance_for_function(callee_fn)
        if instance_a is None or instance_b is None:
            log.info("dropping queued merge %s: a side disappeared", set(item.pair_key))
            return
        if instance_a.id == instance_b.id:
            log.info("dropping queued merge %s: already colocated", set(item.pair_key))
            return
        plan = MergePlan.of(instance_a, instance_b)
        self.execute_merge(plan)

    # -- pipeline ----------------------------------------------------------------

    def execute_merge(self, plan: MergePlan) -> MergeEvent:
        a, b = plan.source_a, plan.source_b
        if a.state is not InstanceState.HEALTHY or b.state is not InstanceState.HEALTHY:
            return self._record(
                plan, None, MergeOutcome.ABORTED_STALE,
                reason=f"{a.id}={a.state.value} {b.id}={b.state.value}",
            )
        with self._lock:
            self._merge_seq += 1
            workdir = self.manager.state_dir / "merges" / f"m-{self._merge_seq:04d}"

        new_instance: FunctionInstance | None = None
        try:
            exported_a = self.manager.export_bundle(a, workdir / "a")
            exported_b = self.manager.export_bundle(b, workdir / "b")
            merged = merge_bundles(exported_a, exported_b, workdir / "merged")
            if self.bundle_hook is not None:
                self.bundle_hook(merged)
            spec = InstanceSpec(
                bundle=merged,
                env=merge_env(a.env, b.env),
                listen_host=a.host,
                hop_delay_ms=max(a.hop_delay_ms, b.hop_delay_ms),
            )
            new_instance = self.manager.deploy(spec)
            self.manager.await_healthy(new_instance, self.config.health_timeout_ms)
        except (BundleError, DeployError, HealthGateError, MergeError) as exc:
            # fail closed: routing and both sources remain exactly as they were
            if new_instance is not None and new_instance.state is InstanceState.STARTING:
                self.manager.registry.transition(new_instance, InstanceState.TERMINATED)
            return self._record(
                plan, new_instance.id if new_instance else None,
                MergeOutcome.ABORTED_HEALTH_FAILURE, reason=str(exc),
            )

        self.router.reroute(
            plan.result_functions,
            InstanceRef(new_instance.id, new_instance.host, new_instance.port),
        )
        for source in (a, b):
            self.manager.drain_and_terminate(
                source,
                drain_timeout_ms=self.config.drain_timeout_ms,
                inflight_count=self.inflight_count,
            )
        return self._record(plan, new_instance.id, MergeOutcome.COMPLETED)

    # -- event log ----------------------------------------------------------------

    def _record(self, plan: MergePlan, new_id: str | None, outcome: MergeOutcome, reason: str = "") -> MergeEvent:
        event = MergeEvent(
            source_a=plan.source_a.id,
            source_b=plan.source_b.id,
            hosted_a=tuple(plan.source_a.manifest),
            hosted_b=tuple(plan.source_b.manifest),
            new_instance=new_id,
            outcome=outcome,
            created_at_ms=plan.created_at_ms,
            completed_at_ms=int(time.time() * 1000),
            reason=reason,
        )
        with self._lock:
            self._events.append(event)
        self.event_log_path.parent.mkdir(parents=True, exist_ok=True)
        with self.event_log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_record(), separators=(",", ":")) + "\n")
        if outcome is MergeOutcome.COMPLETED:
            log.info("merged %s + %s -> %s", event.source_a, event.source_b, new_id)
        else:
            log.warning("merge %s + %s aborted: %s (%s)", event.source_a, event.source_b, outcome.value, reason)
        return event

    def events(self) -> list[MergeEvent]:
        with self._lock:
            return list(self._events)

    def completed_events(self) -> list[MergeEvent]:
        return [e for e in self.events() if e.outcome is MergeOutcome.COMPLETED]

    def received_log(self) -> list[tuple[dict, str]]:
        with self._lock:
            return list(self._received)
