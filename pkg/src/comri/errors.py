"""Exception hierarchy shared across the package."""


class ComriError(Exception):
    """Base class for all package errors."""


class ContractError(ComriError):
    """An argument violates a documented shape or type contract."""


class InvalidInputError(ComriError):
    """Input values are unusable (non-finite, empty, degenerate)."""


class InvalidConfigError(ComriError):
    """A configuration value is out of range or internally inconsistent."""


class DataFormatError(ComriError):
    """A data file does not match the expected on-disk layout."""


class TrainingDivergedError(ComriError):
    """Training produced non-finite values; aborted."""
