"""Exception hierarchy shared by every module."""


class OploraError(Exception):
    """Base class for all library errors."""


class DimensionError(OploraError, ValueError):
    pass


class DataError(OploraError, ValueError):
    """Non-finite or otherwise malformed numeric data."""


class SizeError(OploraError, ValueError):
    """Matrix exceeds the exact-SVD size cap."""


class RankError(OploraError, ValueError):
    pass


class ParameterError(OploraError, ValueError):
    pass


class UndefinedMetricError(OploraError, ValueError):
    """Raised when a metric has a zero denominator."""


class FingerprintError(OploraError):
    """Projectors were built from a different frozen weight."""


class FormatError(OploraError, ValueError):
    """Bad magic, truncated payload or unparseable sidecar."""
