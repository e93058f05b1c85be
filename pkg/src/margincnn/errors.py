"""Exception types raised by the library.

Everything derives from :class:`MarginCnnError` so callers (and the CLI)
can catch library failures with a single except clause.
"""


class MarginCnnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MarginCnnError):
    """Array ranks or extents are inconsistent with the operation."""


class SizeError(MarginCnnError):
    """Requested element count exceeds the addressable range."""


class StateError(MarginCnnError):
    """A cached value is used in a way its producer did not allow."""


class ConfigError(MarginCnnError):
    """A configuration value is missing, out of range, or contradictory."""


class FormatError(MarginCnnError):
    """A binary file does not conform to its declared layout."""


class TrainingError(MarginCnnError):
    """Training aborted: non-finite loss or gradient."""
