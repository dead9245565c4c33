"""
Errors raised by normalnorm.

Every error carries the exit code the management commands map it to.
"""


class NormalNormError(Exception):
    exit_code = 3


class DomainError(NormalNormError, ValueError):
    """Input outside the domain of an operation (non-finite values, bad parameters)."""


class PreconditionError(DomainError):
    """An operation was called on data that does not satisfy its precondition."""


class DataFormatError(DomainError):
    """Malformed CSV, IDX or checkpoint data."""


class UninitializedStateError(NormalNormError, RuntimeError):
    """Running statistics were requested before any training step populated them."""


class DegenerateSampleError(NormalNormError, ArithmeticError):
    exit_code = 4


class DivergenceError(NormalNormError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
