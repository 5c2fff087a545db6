"""Exception hierarchy shared across the package."""


class CMFError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CMFError, ValueError):
    pass


class InvalidInputError(CMFError, ValueError):
    pass


class GenerationError(CMFError, RuntimeError):
    """Synthetic scene or expression could not be generated; re-seed and retry."""


class ManifestError(CMFError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(CMFError, OSError):
    pass


class NumericError(CMFError, FloatingPointError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class CheckpointError(CMFError, ValueError):
    pass
