"""Pure fusion logic: call graphs, fusion groups, merge decisions, routing.

No I/O happens here. The only concurrency-aware object is :class:`Router`,
which owns the single-writer/many-reader swap of immutable routing tables.
"""

from __future__ import annotations

import ipaddress
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Protocol

from .errors import GraphError, InvalidFunctionId, RoutingError

FUNCTION_ID_RE = re.compile(r"^[a-zA-Z0-9_-]+$")


def check_function_id(name: str) -> str:
    """Validate a function identifier and return it unchanged."""
    if not isinstance(name, str) or not FUNCTION_ID_RE.match(name):
        raise InvalidFunctionId(f"invalid function id: {name!r}")
    return name


class CallMode(Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass(frozen=True)
class CallEdge:
    caller: str
    callee: str
    mode: CallMode

    def __post_init__(self) -> None:
        check_function_id(self.caller)
        check_function_id(self.callee)
        if self.caller == self.callee:
            raise GraphError(f"self edge on {self.caller!r}")


@dataclass(frozen=True)
class CallGraph:
    """Accumulated invocation structure of a deployed application."""

    functions: frozenset[str]
    edges: frozenset[CallEdge]

    @classmethod
    def of(cls, functions: Iterable[str], edges: Iterable[tuple[str, str, CallMode]]) -> "CallGraph":
        fns = frozenset(check_function_id(f) for f in functions)
        built = []
        for caller, callee, mode in edges:
            edge = CallEdge(caller, callee, mode)
            if edge.caller not in fns or edge.callee not in fns:
                raise GraphError(f"edge {caller}->{callee} references unknown function")
            built.append(edge)
        return cls(functions=fns, edges=frozenset(built))

    def sync_edges(self) -> frozenset[CallEdge]:
        return frozenset(e for e in self.edges if e.mode is CallMode.SYNC)


# A fusion group is a maximal set of functions connected by sync edges.
FusionGroup = frozenset[str]


def compute_fusion_groups(graph: CallGraph) -> frozenset[FusionGroup]:
    """Connected components of the undirected graph induced by sync edges.

    Functions without sync edges come back as singletons, so the result is
    always a partition of ``graph.functions``.
    """
    adjacency: dict[str, set[str]] = {fn: set() for fn in graph.functions}
    for edge in graph.sync_edges():
        adjacency[edge.caller].add(edge.callee)
        adjacency[edge.callee].add(edge.caller)

    groups: list[FusionGroup] = []
    seen: set[str] = set()
    for start in graph.functions:
        if start in seen:
            continue
        component = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for neighbor in adjacency[node]:
                if neighbor not in component:
                    component.add(neighbor)
                    frontier.append(neighbor)
        seen |= component
        groups.append(frozenset(component))
    return frozenset(groups)


class InternalAddressSet:
    """Membership test for the platform-internal address space.

    Entries are CIDR blocks, single IPs, or literal host names. Detection
    events for destinations outside this set are never acted upon.
    """

    def __init__(self, entries: Iterable[str]):
        self._networks: list[ipaddress.IPv4Network | ipaddress.IPv6Network] = []
        self._names: set[str] = set()
        for entry in entries:
            entry = entry.strip()
            if not entry:
                continue
            try:
                self._networks.append(ipaddress.ip_network(entry, strict=False))
            except ValueError:
                self._names.add(entry)

    def contains(self, host: str) -> bool:
        if host in self._names:
            return True
        try:
            addr = ipaddress.ip_address(host)
        except ValueError:
            return False
        return any(addr in net for net in self._networks)

    def spec_string(self) -> str:
        """Round-trippable form used on the sandbox spawn command line."""
        parts = [str(n) for n in self._networks] + sorted(self._names)
        return ",".join(parts)

    @classmethod
    def parse(cls, spec: str) -> "InternalAddressSet":
        return cls(spec.split(","))


@dataclass(frozen=True)
class FusionRequest:
    """One synchronous-call detection: who called, and which address answered."""

    caller: str
    callee_host: str
    callee_port: int
    observed_at_ms: int
    caller_instance: str | None = None

    def __post_init__(self) -> None:
        check_function_id(self.caller)
        if not (0 < self.callee_port < 65536):
            raise ValueError(f"invalid port: {self.callee_port}")


@dataclass(frozen=True)
class InstanceRef:
    """Stable routing target: instance identity plus its listen address."""

    instance_id: str
    host: str
    port: int


@dataclass(frozen=True)
class RoutingTable:
    """Immutable snapshot mapping each deployed function to one instance."""

    entries: Mapping[str, InstanceRef] = field(default_factory=dict)
    generation: int = 0


def apply_reroute(table: RoutingTable, functions: Iterable[str], target: InstanceRef) -> RoutingTable:
    """Return a new table pointing ``functions`` at ``target``.

    Unknown functions reject the whole mutation; the input table is never
    touched. The generation advances even for an empty reroute.
    """
    wanted = set(functions)
    unknown = wanted - set(table.entries)
    if unknown:
        raise RoutingError(f"reroute of undeployed functions: {sorted(unknown)}")
    entries = dict(table.entries)
    for fn in wanted:
        entries[fn] = target
    return RoutingTable(entries=entries, generation=table.generation + 1)


class Router:
    """Holder for the live routing table: one writer, wait-free readers.

    Readers get an immutable :class:`RoutingTable` snapshot; writers replace
    the whole table reference under a lock, so a concurrent reader observes
    either all old or all new entries, never a mix.
    """

    def __init__(self) -> None:
        self._table = RoutingTable()
        self._write_lock = threading.Lock()

    def current(self) -> RoutingTable:
        return self._table

    def reroute(self, functions: Iterable[str], target: InstanceRef) -> RoutingTable:
        with self._write_lock:
            self._table = apply_reroute(self._table, functions, target)
            return self._table

    def add(self, function: str, target: InstanceRef) -> RoutingTable:
        check_function_id(function)
        with self._write_lock:
            if function in self._table.entries:
                raise RoutingError(f"function already routed: {function}")
            entries = dict(self._table.entries)
            entries[function] = target
            self._table = RoutingTable(entries=entries, generation=self._table.generation + 1)
            return self._table

    def remove(self, functions: Iterable[str]) -> RoutingTable:
        with self._write_lock:
            entries = dict(self._table.entries)
            for fn in functions:
                entries.pop(fn, None)
            self._table = RoutingTable(entries=entries, generation=self._table.generation + 1)
            return self._table


class InstanceView(Protocol):
    """What fusion resolution needs to know about a live instance."""

    @property
    def id(self) -> str: ...

    @property
    def hosted(self) -> frozenset[str]: ...

    @property
    def host(self) -> str: ...

    @property
    def port(self) -> int: ...


class RegistryView(Protocol):
    """Read interface over the live (non-terminated) instance set."""

    def live_instance_for_function(self, function: str) -> InstanceView | None: ...

    def live_instance_at(self, host: str, port: int) -> InstanceView | None: ...


@dataclass(frozen=True)
class Merge:
    """Caller and callee run in different sandboxes: fuse them."""

    instance_a: InstanceView
    instance_b: InstanceView


@dataclass(frozen=True)
class AlreadyColocated:
    instance_id: str


@dataclass(frozen=True)
class UnknownCallee:
    """No live instance owns the observed address; detection was stale."""

    host: str
    port: int


@dataclass(frozen=True)
class UnknownCaller:
    """Caller function is not deployed; the request is bogus or very stale."""

    caller: str


MergeDecision = Merge | AlreadyColocated | UnknownCallee | UnknownCaller


def resolve_fusion_request(req: FusionRequest, registry: RegistryView) -> MergeDecision:
    """Map a detection event onto the live instance set."""
    caller_instance = registry.live_instance_for_function(req.caller)
    if caller_instance is None:
        return UnknownCaller(req.caller)
    callee_instance = registry.live_instance_at(req.callee_host, req.callee_port)
    if callee_instance is None:
        return UnknownCallee(req.callee_host, req.callee_port)
    if caller_instance.id == callee_instance.id:
        return AlreadyColocated(caller_instance.id)
    return Merge(caller_instance, callee_instance)
