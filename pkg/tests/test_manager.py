"""Sandbox lifecycle: deploy, health gate, export fidelity, drain, RSS."""

from __future__ import annotations

import threading
import time

import pytest

from faasfuse.bundles import tree_digest, write_manifest
from faasfuse.errors import BundleError, DeployError, HealthGateError, LifecycleError
from faasfuse.manager import InstanceSpec, InstanceState
from faasfuse.netutil import allocate_port, http_request
from faasfuse.wire import DISPATCH_HEADER
from tests.conftest import BROKEN_CODE, ECHO_CODE, SLOW_CODE, STUCK_CODE, make_bundle


def deploy_healthy(manager, bundle, **spec_kw):
    instance = manager.deploy(InstanceSpec(bundle=bundle, **spec_kw))
    return manager.await_healthy(instance)


def call(instance, name, body=b""):
    return http_request("POST", instance.host, instance.port, "/", body, {DISPATCH_HEADER: name})


def test_deploy_single_function_starts_in_starting(manager, echo_bundle):
    instance = manager.deploy(InstanceSpec(bundle=echo_bundle))
    assert instance.state is InstanceState.STARTING
    assert instance.hosted == frozenset({"alpha"})
    assert manager.registry.get(instance.id) is instance


def test_deploy_merged_bundle_hosts_all_functions(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE, "b": ECHO_CODE, "d": ECHO_CODE, "e": ECHO_CODE})
    instance = deploy_healthy(manager, bundle)
    assert instance.hosted == frozenset("abde")
    for name in "abde":
        assert call(instance, name, b"x").body == f"echo:{name}:x".encode()


def test_deploy_rejects_invalid_bundle_before_spawn(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE})
    write_manifest(bundle.root, ("a", "missing"))
    with pytest.raises(BundleError):
        manager.deploy(InstanceSpec(bundle=bundle))
    assert manager.registry.instances() == []


def test_deploy_spawn_failure_leaves_nothing_registered(tmp_path, echo_bundle):
    from faasfuse.config import PlatformConfig
    from faasfuse.manager import InstanceRegistry, RuntimeManager
    from faasfuse.sandbox import ProcessSandboxBackend

    broken = RuntimeManager(
        backend=ProcessSandboxBackend(),
        registry=InstanceRegistry(),
        config=PlatformConfig(runtime_cmd=["/no/such/runtime"]),
        state_dir=tmp_path / "state",
    )
    with pytest.raises(DeployError, match="spawn"):
        broken.deploy(InstanceSpec(bundle=echo_bundle))
    assert broken.registry.instances() == []


def test_deploy_port_conflict_reports_address(manager, echo_bundle, tmp_path):
    port = allocate_port()
    first = deploy_healthy(manager, echo_bundle, listen_port=port)
    other = make_bundle(tmp_path, {"beta": ECHO_CODE}, tag="other")
    with pytest.raises(DeployError, match=f"{port}"):
        manager.deploy(InstanceSpec(bundle=other, listen_port=port))
    assert first.state is InstanceState.HEALTHY


def test_await_healthy_happy_path(manager, echo_bundle):
    instance = deploy_healthy(manager, echo_bundle)
    assert instance.state is InstanceState.HEALTHY
    assert call(instance, "alpha", b"ping").body == b"echo:alpha:ping"


def test_await_healthy_zero_timeout_fails_immediately(manager, echo_bundle):
    instance = manager.deploy(InstanceSpec(bundle=echo_bundle))
    started = time.monotonic()
    with pytest.raises(HealthGateError):
        manager.await_healthy(instance, timeout_ms=0)
    assert time.monotonic() - started < 3.0
    assert instance.state is InstanceState.TERMINATED


def test_broken_entry_module_terminates_after_timeout(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"bad": BROKEN_CODE})
    instance = manager.deploy(InstanceSpec(bundle=bundle))
    with pytest.raises(HealthGateError):
        manager.await_healthy(instance, timeout_ms=1200)
    assert instance.state is InstanceState.TERMINATED
    assert manager.registry.live_instances() == []


def test_export_roundtrip_preserves_responses_and_bytes(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE, "b": ECHO_CODE})
    original = deploy_healthy(manager, bundle)
    exported = manager.export_bundle(original)
    assert exported.manifest == ("a", "b")
    assert tree_digest(exported.root) == tree_digest(original.bundle_dir)

    redeployed = deploy_healthy(manager, exported)
    for name in ("a", "b"):
        for body in (b"", b"payload", b"\x00\xff"):
            assert call(redeployed, name, body).body == call(original, name, body).body


def test_export_of_terminated_instance_rejected(manager, echo_bundle):
    instance = deploy_healthy(manager, echo_bundle)
    manager.drain_and_terminate(instance, drain_timeout_ms=0)
    with pytest.raises(LifecycleError):
        manager.export_bundle(instance)


def test_drain_with_no_inflight_terminates_immediately(manager, echo_bundle):
    instance = deploy_healthy(manager, echo_bundle)
    started = time.monotonic()
    manager.drain_and_terminate(instance, drain_timeout_ms=5000, inflight_count=lambda _id: 0)
    assert time.monotonic() - started < 1.0
    assert instance.state is InstanceState.TERMINATED


def test_drain_waits_for_inflight_request_to_finish(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"slow": SLOW_CODE})
    instance = deploy_healthy(manager, bundle)

    outcome = {}

    def client():
        outcome["reply"] = call(instance, "slow", b"200")

    thread = threading.Thread(target=client)
    thread.start()
    time.sleep(0.05)  # let the request reach the sandbox

    tracker = {"n": 1}

    def inflight(_id):
        return tracker["n"] if thread.is_alive() else 0

    manager.drain_and_terminate(instance, drain_timeout_ms=2000, inflight_count=inflight)
    thread.join(timeout=5)
    assert outcome["reply"].status == 200
    assert outcome["reply"].body == b"slept:200"
    assert instance.state is InstanceState.TERMINATED


def test_drain_force_kills_stuck_request_at_timeout(manager, tmp_path):
    bundle = make_bundle(tmp_path, {"stuck": STUCK_CODE})
    instance = deploy_healthy(manager, bundle)

    thread = threading.Thread(target=lambda: _swallow(lambda: call(instance, "stuck")))
    thread.start()
    time.sleep(0.1)

    started = time.monotonic()
    manager.drain_and_terminate(instance, drain_timeout_ms=500, inflight_count=lambda _id: 1)
    elapsed = time.monotonic() - started
    assert 0.45 <= elapsed < 2.0  # forced kill happens at, not before, the timeout
    assert instance.state is InstanceState.TERMINATED
    thread.join(timeout=5)


def _swallow(fn):
    try:
        fn()
    except OSError:
        pass


def test_lifecycle_transitions_are_guarded(manager, echo_bundle):
    instance = deploy_healthy(manager, echo_bundle)
    with pytest.raises(LifecycleError):
        manager.registry.transition(instance, InstanceState.STARTING)
    with pytest.raises(LifecycleError):
        manager.registry.transition(instance, InstanceState.TERMINATED)  # must drain first
    with pytest.raises(LifecycleError):
        manager.await_healthy(instance)  # already healthy


def test_address_uniqueness_among_live_instances(manager, echo_bundle, tmp_path):
    instance = deploy_healthy(manager, echo_bundle)
    live = manager.registry.live_instances()
    assert len({i.address for i in live}) == len(live)
    # after termination the address may be reused
    port = instance.port
    manager.drain_and_terminate(instance, drain_timeout_ms=0)
    other = make_bundle(tmp_path, {"beta": ECHO_CODE}, tag="other")
    replacement = deploy_healthy(manager, other, listen_port=port)
    assert replacement.port == port


def test_measure_rss_reports_positive_bytes_and_flags_dead(manager, echo_bundle):
    assert manager.measure_rss() == []
    instance = deploy_healthy(manager, echo_bundle)
    [sample] = manager.measure_rss()
    assert sample.instance_id == instance.id
    assert sample.rss_bytes > 0
    assert not sample.flagged

    instance.handle.popen.kill()  # dies behind the platform's back
    instance.handle.popen.wait()
    [sample] = manager.measure_rss()
    assert sample.rss_bytes == 0
    assert sample.flagged
