"""Exception hierarchy shared across the platform."""


class PlatformError(Exception):
    """Base class for all platform-raised errors."""


class InvalidFunctionId(PlatformError):
    """Function name violates the `[a-zA-Z0-9_-]+` identifier contract."""


class GraphError(PlatformError):
    """Call graph violates a structural invariant."""


class RoutingError(PlatformError):
    """Routing mutation referenced an unknown function; table left unchanged."""


class BundleError(PlatformError):
    """Bundle tree or manifest violates the on-disk layout contract."""


class DeployError(PlatformError):
    """Instance could not be created (port conflict, spawn failure, bad spec)."""


class HealthGateError(PlatformError):
    """Instance never passed its health checks; it has been terminated."""


class LifecycleError(PlatformError):
    """Illegal instance state transition or operation in the wrong state."""


class MergeError(PlatformError):
    """Bundle merge precondition violated (overlapping manifests)."""


class ConfigError(PlatformError):
    """Platform configuration file or value is invalid."""
