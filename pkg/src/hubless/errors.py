"""Exception types shared across the package.

Validation problems (bad shapes, bad configs, degenerate inputs) and
storage problems (unreadable or corrupt files) are kept in separate
branches so the CLI can map them to distinct exit codes.
"""


class HublessError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HublessError):
    """Bad arguments, shapes, or configuration. CLI exit code 1."""


class StorageError(HublessError):
    """File I/O and format problems. CLI exit code 2."""


class DimMismatchError(ValidationError):
    """Operands disagree on dimensionality."""


class DegenerateVectorError(ValidationError):
    """A vector with (near-)zero norm where a direction is required."""


class ZeroVarianceError(ValidationError):
    """Counts are uniform; skewness is undefined."""


class ConfigError(ValidationError):
    """A configuration value violates its invariants."""


class EmptyBatchError(ValidationError):
    """A batch with zero instances was passed to a loss."""


class CacheMismatchError(ValidationError):
    """A backward pass was given a cache from different weights."""


class ManifestMismatchError(ValidationError):
    """Labels, class names, or split manifests do not line up."""


class FormatError(StorageError):
    """A file does not conform to its declared format."""


class CorruptDataError(StorageError):
    """A file parses but contains invalid values (NaN/Inf)."""


class IoError(StorageError):
    """An underlying read or write failed."""
