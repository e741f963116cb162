"""Exception types shared across the package."""


class RepruneError(Exception):
    """Base class so callers can catch everything we raise on purpose."""


class DimensionError(RepruneError):
    """Array shapes do not line up for the requested operation."""


class ConfigurationError(RepruneError):
    """A config value, mask, or object combination is invalid."""


class FormatError(RepruneError):
    """A file on disk does not match its declared binary format."""
