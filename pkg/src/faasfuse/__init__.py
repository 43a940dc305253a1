"""FaaS platform with transparent runtime function fusion.

Keep this module import-light: the per-instance runtime (`faasfuse.runtime`)
is spawned once per sandbox and pays this import on every cold start.
"""

__version__ = "0.1.0"
