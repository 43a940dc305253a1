"""Wire-level constants shared by the gateway, the sandbox runtime, and tests.

These names are interface contracts: external runtimes that implement the
sandbox spawn contract must use the same header, paths, and variables.
"""

DISPATCH_HEADER = "X-Function-Name"
INVOKE_PATH_PREFIX = "/fn/"
HEALTH_PATH = "/health"
MERGE_PATH = "/merge"

# Added to every proxied invoke response: which instance served it. This is
# what lets a detecting runtime name the callee's address in fusion requests.
SERVED_BY_HEADER = "X-Served-By"
INSTANCE_ADDRESS_HEADER = "X-Instance-Address"

# Environment passed to every sandbox process.
ENV_INSTANCE_ID = "FAAS_INSTANCE_ID"
ENV_HOP_DELAY_MS = "FAAS_HOP_DELAY_MS"

# Module name under which the in-sandbox SDK is importable by function code.
SDK_MODULE = "faas_sdk"
