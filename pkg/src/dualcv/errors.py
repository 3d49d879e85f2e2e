"""Exception hierarchy shared across the package."""


class DualcvError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DualcvError):
    """Invalid configuration: bad parameter values, schedules or shapes."""


class NumericalError(DualcvError):
    """Numerical failure: model blow-up or an unusable linear system."""


class ArtifactError(DualcvError):
    """Artifact file is missing, corrupt, or has an unsupported version."""
