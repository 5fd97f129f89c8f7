"""Exception types shared across the package."""


class PerishviError(Exception):
    """Base class for all package errors."""


class ParameterError(PerishviError, ValueError):
    """An argument is outside the domain of the function."""


class ContractViolation(PerishviError, ValueError):
    """A caller broke a documented precondition."""


class CapacityError(PerishviError, MemoryError):
    """The requested state space cannot be held in memory."""

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class NumericDivergenceError(PerishviError, ArithmeticError):
    """Value iteration produced a non-finite value."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class CheckpointError(PerishviError, OSError):
    """A checkpoint could not be read or written."""


class CheckpointFormatError(CheckpointError):
    """A checkpoint file is truncated or not a checkpoint at all."""


class FingerprintMismatch(CheckpointError):
    """A checkpoint or policy file was produced by a different model."""

    def __init__(self, expected: str, found: str):
        super().__init__(
            f"model fingerprint mismatch: expected {expected}, file has {found}"
        )
        self.expected = expected
        self.found = found


class ConfigError(PerishviError, ValueError):
    """An experiment configuration could not be parsed or validated."""
