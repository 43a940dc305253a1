"""Platform wire contract this runtime implements.

These values mirror the host platform's dispatch protocol and sandbox spawn
contract; they are duplicated here on purpose so this package stands alone.
"""

from __future__ import annotations

import ipaddress
from typing import Iterable

DISPATCH_HEADER = "X-Function-Name"
SERVED_BY_HEADER = "X-Served-By"
INSTANCE_ADDRESS_HEADER = "X-Instance-Address"

HEALTH_PATH = "/health"
STATS_PATH = "/stats"
INVOKE_PATH_PREFIX = "/fn/"

ENV_INSTANCE_ID = "FAAS_INSTANCE_ID"
ENV_HOP_DELAY_MS = "FAAS_HOP_DELAY_MS"

SDK_MODULE = "faas_sdk"

MANIFEST_NAME = "manifest"
ENTRY_MODULE = "fn.py"


class InternalAddressSet:
    """CIDR blocks, single IPs, or literal host names considered platform-internal."""

    def __init__(self, entries: Iterable[str]):
        self._networks = []
        self._names = set()
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

    @classmethod
    def parse(cls, spec: str) -> "InternalAddressSet":
        return cls(spec.split(","))
