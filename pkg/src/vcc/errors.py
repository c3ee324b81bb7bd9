"""Exception types shared across the toolkit."""


class VccError(Exception):
    """Base class for toolkit errors."""


class ConfigError(VccError, ValueError):
    pass


class FormatError(VccError):
    """Unsupported file encoding."""


class CorruptFileError(VccError):
    """File is truncated or structurally invalid."""


class InputError(VccError, ValueError):
    pass


class NoVoicingError(VccError, ValueError):
    """No voiced frames where at least one is required."""


class StatsError(VccError, ValueError):
    pass


class DimensionError(VccError, ValueError):
    pass


class NumericError(VccError, FloatingPointError):
    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class DomainError(VccError, ValueError):
    pass


class UsageError(VccError, ValueError):
    pass


class IntegrityError(VccError):
    """Checkpoint chain or hash verification failed."""


class ManifestError(VccError, ValueError):
    pass
