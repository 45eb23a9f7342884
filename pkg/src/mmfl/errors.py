"""Exception hierarchy shared by every module."""


class MMFLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MMFLError, ValueError):
    """Invalid architecture, dimensions, or experiment settings."""


class DataError(MMFLError, ValueError):
    """Malformed or inconsistent data (labels, files, sample counts)."""


class UsageError(MMFLError, ValueError):
    """An API was called with arguments that break its contract."""


class ProtocolError(MMFLError, RuntimeError):
    """A federation step received input the round protocol forbids."""
