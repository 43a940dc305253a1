"""Merge pipeline: bundle merging, request intake, end-to-end fusion."""

from __future__ import annotations

import threading
import time

import pytest

from faasfuse.bundles import tree_digest
from faasfuse.config import PlatformConfig
from faasfuse.core import FusionRequest
from faasfuse.errors import MergeError
from faasfuse.manager import InstanceState
from faasfuse.merger import MergeOutcome, MergePlan, merge_bundles, merge_env
from faasfuse.platform import Platform
from tests.conftest import ECHO_CODE, make_bundle, write_function


def now_ms() -> int:
    return int(time.time() * 1000)


def fusion_req(caller, callee_instance):
    return FusionRequest(caller, callee_instance.host, callee_instance.port, now_ms())


@pytest.fixture
def platform(tmp_path):
    config = PlatformConfig(health_timeout_ms=8000, drain_timeout_ms=4000)
    p = Platform(config)
    p.start()
    yield p
    p.stop()


# -- merge_bundles --------------------------------------------------------------

def test_merge_bundles_concatenates_manifests(tmp_path):
    ab = make_bundle(tmp_path, {"A": ECHO_CODE, "B": ECHO_CODE}, tag="ab")
    d = make_bundle(tmp_path, {"D": ECHO_CODE}, tag="d")
    merged = merge_bundles(ab, d, tmp_path / "merged")
    assert merged.manifest == ("A", "B", "D")
    for name in "ABD":
        assert (merged.root / name / "fn.py").is_file()


def test_merge_bundles_preserves_same_named_support_files(tmp_path):
    src = tmp_path / "srcdirs"
    a_dir = write_function(src, "A", ECHO_CODE, support={"util": "contents of A's util\n"})
    b_dir = write_function(src, "B", ECHO_CODE, support={"util": "contents of B's util\n"})
    from faasfuse.bundles import create_bundle

    a = create_bundle(tmp_path / "a", {"A": a_dir})
    b = create_bundle(tmp_path / "b", {"B": b_dir})
    merged = merge_bundles(a, b, tmp_path / "m")
    assert (merged.root / "A" / "util").read_text() == "contents of A's util\n"
    assert (merged.root / "B" / "util").read_text() == "contents of B's util\n"
    # every input file arrives byte-identically
    assert tree_digest(merged.root / "A") == tree_digest(a.root / "A")
    assert tree_digest(merged.root / "B") == tree_digest(b.root / "B")


def test_merge_bundles_rejects_overlapping_manifests(tmp_path):
    a = make_bundle(tmp_path, {"A": ECHO_CODE}, tag="one")
    also_a = make_bundle(tmp_path, {"A": ECHO_CODE}, tag="two")
    with pytest.raises(MergeError):
        merge_bundles(a, also_a, tmp_path / "m")


def test_merge_env_union_and_conflicts():
    assert merge_env({"X": "1"}, {"Y": "2"}) == {"X": "1", "Y": "2"}
    assert merge_env({"X": "1"}, {"X": "1"}) == {"X": "1"}
    with pytest.raises(MergeError, match="X"):
        merge_env({"X": "1"}, {"X": "2"})


# -- execute_merge ----------------------------------------------------------------

CALLER_CODE = """\
import faas_sdk

def handler(request):
    inner = faas_sdk.invoke("{callee}", request.body, mode="sync")
    return b"outer(" + inner + b")"
"""


def deploy_fixture_pair(platform, tmp_path):
    caller_dir = write_function(tmp_path / "fns", "caller", CALLER_CODE.format(callee="callee"))
    callee_dir = write_function(tmp_path / "fns", "callee", ECHO_CODE)
    a = platform.deploy_function("caller", source_dir=caller_dir)
    b = platform.deploy_function("callee", source_dir=callee_dir)
    return a, b


def test_execute_merge_completes_and_reroutes(platform, tmp_path):
    a, b = deploy_fixture_pair(platform, tmp_path)
    before = platform.invoke("caller", b"x")
    assert before.status == 200 and before.body == b"outer(echo:callee:x)"
    gen_before = platform.router.current().generation

    event = platform.merger.execute_merge(MergePlan.of(a, b))
    assert event.outcome is MergeOutcome.COMPLETED
    assert event.completed_at_ms >= event.created_at_ms

    table = platform.router.current()
    assert table.generation == gen_before + 1  # one atomic swap
    fused_id = table.entries["caller"].instance_id
    assert table.entries["callee"].instance_id == fused_id
    assert fused_id == event.new_instance
    assert a.state is InstanceState.TERMINATED
    assert b.state is InstanceState.TERMINATED

    fused = platform.registry.get(fused_id)
    assert fused.hosted == frozenset({"caller", "callee"})
    after = platform.invoke("caller", b"x")
    assert after.status == 200 and after.body == before.body


def test_execute_merge_stale_source_aborts_without_side_effects(platform, tmp_path):
    a, b = deploy_fixture_pair(platform, tmp_path)
    plan = MergePlan.of(a, b)
    platform.manager.drain_and_terminate(b, drain_timeout_ms=0)  # concurrent merge won
    instances_before = {i.id for i in platform.registry.live_instances()}
    gen_before = platform.router.current().generation

    event = platform.merger.execute_merge(plan)
    assert event.outcome is MergeOutcome.ABORTED_STALE
    assert event.new_instance is None
    assert {i.id for i in platform.registry.live_instances()} == instances_before
    assert platform.router.current().generation == gen_before


def test_poisoned_merged_bundle_fails_closed(tmp_path):
    def poison(bundle):
        (bundle.root / bundle.manifest[0] / "fn.py").write_text(
            "raise RuntimeError('poisoned merge')\n", "utf-8"
        )

    config = PlatformConfig(health_timeout_ms=1200, drain_timeout_ms=2000)
    with Platform(config, bundle_hook=poison) as platform:
        a, b = deploy_fixture_pair(platform, tmp_path)
        table_before = platform.router.current()

        stop = threading.Event()
        failures = []

        def client_load():
            while not stop.is_set():
                reply = platform.invoke("callee", b"ping")
                if reply.status != 200 or reply.body != b"echo:callee:ping":
                    failures.append(reply.status)
                time.sleep(0.01)

        loader = threading.Thread(target=client_load)
        loader.start()
        try:
            event = platform.merger.execute_merge(MergePlan.of(a, b))
        finally:
            stop.set()
            loader.join()

        assert event.outcome is MergeOutcome.ABORTED_HEALTH_FAILURE
        table_after = platform.router.current()
        assert table_after.generation == table_before.generation
        assert table_after.entries == table_before.entries
        assert a.state is InstanceState.HEALTHY
        assert b.state is InstanceState.HEALTHY
        assert failures == []  # zero failed client requests throughout the abort
        # the poisoned instance never went live
        live = {i.id for i in platform.registry.live_instances()}
        assert live == {a.id, b.id}


# -- submit / queue ---------------------------------------------------------------

def test_submit_unknown_callee_and_external_addresses_dropped(platform, tmp_path):
    a, b = deploy_fixture_pair(platform, tmp_path)
    dead_port = b.port
    platform.manager.drain_and_terminate(b, drain_timeout_ms=0)
    ack = platform.merger.submit(FusionRequest("caller", b.host, dead_port, now_ms()))
    assert ack.status == "unknown_callee"

    ack = platform.merger.submit(FusionRequest("caller", "93.184.216.34", 80, now_ms()))
    assert ack.status == "dropped_external"

    ack = platform.merger.submit(FusionRequest("ghost", a.host, a.port, now_ms()))
    assert ack.status == "unknown_caller"


def test_hundred_duplicate_requests_one_merge(platform, tmp_path):
    a, b = deploy_fixture_pair(platform, tmp_path)
    req = fusion_req("caller", b)

    acks = []
    threads = [
        threading.Thread(target=lambda: acks.append(platform.merger.submit(req)))
        for _ in range(100)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert platform.merger.wait_idle(30)

    completed = platform.merger.completed_events()
    assert len(completed) == 1
    statuses = {a.status for a in acks}
    assert "enqueued" in statuses
    assert statuses <= {"enqueued", "coalesced", "already_colocated"}

    # idempotence: the fused pair acknowledges as colocated forever after
    fused = platform.registry.live_instance_for_function("caller")
    for _ in range(5):
        ack = platform.merger.submit(fusion_req("caller", fused))
        assert ack.status == "already_colocated"
    assert len(platform.merger.completed_events()) == 1


def test_fusion_threshold_counts_before_enqueue(tmp_path):
    config = PlatformConfig(fusion_threshold=3, health_timeout_ms=8000)
    with Platform(config) as platform:
        a, b = deploy_fixture_pair(platform, tmp_path)
        req = fusion_req("caller", b)
        assert platform.merger.submit(req).status == "counted"
        assert platform.merger.submit(req).status == "counted"
        assert platform.merger.submit(req).status == "enqueued"
        assert platform.merger.wait_idle(30)
        assert len(platform.merger.completed_events()) == 1


def test_chained_requests_converge_to_fusion_groups(platform, tmp_path):
    """TREE scripted stream: pairwise merges reach the sync components."""
    tree = {
        "A": ["B"], "B": ["D", "E"], "C": [], "D": [], "E": [], "F": [], "G": [],
    }
    dirs = {
        name: write_function(
            tmp_path / "tree", name,
            ECHO_CODE if not callees else _chain_code(callees),
        )
        for name, callees in tree.items()
    }
    instances = {name: platform.deploy_function(name, source_dir=d) for name, d in dirs.items()}
    assert len(platform.registry.live_instances()) == 7

    # one request per sync edge, all against the original addresses
    for caller, callee in (("A", "B"), ("B", "D"), ("B", "E")):
        platform.merger.submit(fusion_req(caller, instances[callee]))
    assert platform.merger.wait_idle(60)

    live = platform.registry.live_instances()
    hosted = {inst.hosted for inst in live}
    assert hosted == {
        frozenset("ABDE"), frozenset("C"), frozenset("F"), frozenset("G"),
    }
    assert all(i.state is InstanceState.HEALTHY for i in live)
    # hosted sets only ever grow; the deployed function count is conserved
    assert sum(len(inst.hosted) for inst in live) == 7
    for event in platform.merger.completed_events():
        survivor_size = len(event.hosted_a) + len(event.hosted_b)
        assert survivor_size > max(len(event.hosted_a), len(event.hosted_b))
        survivor = platform.registry.get(event.new_instance)
        assert len(survivor.hosted) == survivor_size
    # everything still responds, through any merge order
    assert platform.invoke("A", b"z").status == 200


def _chain_code(callees):
    calls = "".join(
        f'    faas_sdk.invoke("{c}", request.body, mode="sync")\n' for c in callees
    )
    return (
        "import faas_sdk\n\n"
        "def handler(request):\n"
        f"{calls}"
        "    return b\"ok:\" + request.function.encode()\n"
    )
