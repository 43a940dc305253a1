"""Function-handler runtime with synchronous-call detection.

Drop-in sandbox runtime for fusion-capable FaaS platforms: it implements
the standard spawn contract and dispatch protocol, inlines calls between
colocated functions, and reports blocking calls to platform-internal
addresses to the merger so the platform can fuse the endpoints.
"""

__version__ = "0.1.0"
