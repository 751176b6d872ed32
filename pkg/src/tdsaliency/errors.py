"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes or image sizes are incompatible."""


class CapacityError(ValueError):
    """Not enough data points for the requested number of clusters."""


class DegenerateDataError(ValueError):
    """Training data cannot define a classifier (e.g. a single class)."""


class UndefinedRecallError(ValueError):
    """Recall is undefined because the ground truth holds no positives."""


class ConfigError(ValueError):
    """Malformed configuration file."""


class ManifestError(ValueError):
    """Malformed dataset manifest."""


class ModelFormatError(Exception):
    """Model container cannot be parsed (truncated or inconsistent)."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass
