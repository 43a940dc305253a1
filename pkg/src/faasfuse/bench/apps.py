"""The two built-in workload applications, generated as deployable code.

TREE is a minimal binary call tree: one synchronous branch (A-B-D/E) and one
asynchronous branch (A-C-F/G). IOT models a sensor pipeline: the entry
function synchronously fans out to three analyses and a combiner, which
hands off to storage asynchronously.

Every generated handler sleeps a configurable compute delay, then returns a
deterministic JSON document embedding its synchronous callees' responses,
so response bytes are comparable request-for-request across runs and modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..core import CallGraph, CallMode, compute_fusion_groups

COMPUTE_DELAY_ENV = "BENCH_COMPUTE_DELAY_MS"

_FUNCTION_TEMPLATE = '''\
import json
import os
import time

import faas_sdk

FUNCTION = {function!r}
SYNC_CALLS = {sync_calls!r}
ASYNC_CALLS = {async_calls!r}
COMPUTE_DELAY_MS = int(os.environ.get({delay_env!r}, "10"))


def handler(request):
    time.sleep(COMPUTE_DELAY_MS / 1000.0)
    payload = request.body or b"{{}}"
    doc = {{"fn": FUNCTION, "i": json.loads(payload).get("i")}}
    for name in SYNC_CALLS:
        doc[name] = json.loads(faas_sdk.invoke(name, payload, mode="sync"))
    for name in ASYNC_CALLS:
        faas_sdk.invoke(name, payload, mode="async")
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
'''

_TREE_CALLS: dict[str, tuple[list[str], list[str]]] = {
    "A": (["B"], ["C"]),
    "B": (["D", "E"], []),
    "C": ([], ["F", "G"]),
    "D": ([], []),
    "E": ([], []),
    "F": ([], []),
    "G": ([], []),
}

_IOT_CALLS: dict[str, tuple[list[str], list[str]]] = {
    "AnalyzeSensor": (["Temperature", "AirQuality", "Traffic", "Combine"], []),
    "Temperature": ([], []),
    "AirQuality": ([], []),
    "Traffic": ([], []),
    "Combine": ([], ["Store"]),
    "Store": ([], []),
}

_ENTRYPOINTS = {"tree": "A", "iot": "AnalyzeSensor"}
_CALL_MAPS = {"tree": _TREE_CALLS, "iot": _IOT_CALLS}


@dataclass(frozen=True)
class WorkloadApp:
    name: str
    entrypoint: str
    graph: CallGraph
    function_dirs: dict[str, Path]

    def expected_groups(self) -> frozenset[frozenset[str]]:
        return compute_fusion_groups(self.graph)

    def sync_edges(self) -> list[tuple[str, str]]:
        return sorted((e.caller, e.callee) for e in self.graph.sync_edges())


def app_graph(name: str) -> CallGraph:
    calls = _call_map(name)
    edges = []
    for caller, (sync, async_) in calls.items():
        edges.extend((caller, callee, CallMode.SYNC) for callee in sync)
        edges.extend((caller, callee, CallMode.ASYNC) for callee in async_)
    return CallGraph.of(calls.keys(), edges)


def build_app(name: str, dest: Path) -> WorkloadApp:
    """Write one deployable directory per function under ``dest``."""
    calls = _call_map(name)
    dest = Path(dest)
    dirs: dict[str, Path] = {}
    for function, (sync, async_) in calls.items():
        fdir = dest / function
        fdir.mkdir(parents=True)
        code = _FUNCTION_TEMPLATE.format(
            function=function,
            sync_calls=sync,
            async_calls=async_,
            delay_env=COMPUTE_DELAY_ENV,
        )
        (fdir / "fn.py").write_text(code, "utf-8")
        dirs[function] = fdir
    return WorkloadApp(
        name=name,
        entrypoint=_ENTRYPOINTS[name],
        graph=app_graph(name),
        function_dirs=dirs,
    )


def payload_for(index: int) -> bytes:
    return ('{"i": %d}' % index).encode("ascii")


def _call_map(name: str) -> dict[str, tuple[list[str], list[str]]]:
    try:
        return _CALL_MAPS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown app {name!r}; choose from {sorted(_CALL_MAPS)}") from None
