"""Exception hierarchy shared by all modules.

``ConfigError`` maps to CLI exit code 1, every ``NumericalError`` to exit code 2.
"""


class InvalidInputError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(RuntimeError):
    """Base class for failures of a numerical procedure on valid input."""


class SingularMatrixError(NumericalError):
    pass


class SingularKernelError(NumericalError):
    pass


class CovarianceSizeError(NumericalError):
    pass


class NotPSDError(NumericalError):
    pass


class GridMismatchError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class PreconditionError(NumericalError):
    pass


class NoRootError(NumericalError):
    pass


class TailBoundError(NumericalError):
    pass


class DegenerateFitError(NumericalError):
    pass


class RunFailure(NumericalError):
    pass


class QuadratureAccuracyWarning(UserWarning):
    def __init__(self, message, estimate, refined):
        self.estimate = estimate
        self.refined = refined
        super().__init__(message)
