"""Exception hierarchy shared by every module of the package."""


class VarMAEError(Exception):
    """Base class for all package errors."""


class ShapeError(VarMAEError, ValueError):
    pass


class NumericOverflowError(VarMAEError, FloatingPointError):
    pass


class ContractError(VarMAEError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(VarMAEError, ValueError):
    """Invalid configuration. ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(VarMAEError, ValueError):
    """Malformed input data. ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None, path=None):
        if line is not None:
            message = f"{message} (line {line}{f' of {path}' if path else ''})"
        super().__init__(message)
        self.line = line
        self.path = path


class OracleInvalidError(VarMAEError, RuntimeError):
    """The function handed to a gradient oracle is not deterministic."""


class TrainingAborted(VarMAEError, RuntimeError):
    """Raised when training hits a non-finite loss."""

    def __init__(self, message, step, last_good=None):
        super().__init__(f"{message} at step {step}; last good checkpoint: {last_good}")
        self.step = step
        self.last_good = last_good


class CheckpointError(VarMAEError, ValueError):
    pass
