"""
Exception hierarchy for the LQR learning library
Validation errors map to CLI exit code 2, numerical failures to exit code 3
"""

from typing import List, Optional, Sequence


class ControlLearningError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage
        self.iteration: Optional[int] = None

    def annotate(self, stage: Optional[str] = None, iteration: Optional[int] = None):
        """Attach pipeline stage / iteration context and return self for re-raising"""
        if stage is not None and self.stage is None:
            self.stage = stage
        if iteration is not None and self.iteration is None:
            self.iteration = iteration
        return self

    def __str__(self) -> str:
        message = super().__str__()
        if self.iteration is not None:
            message = f"{message} (iteration {self.iteration})"
        return message


class ValidationError(ControlLearningError):
    exit_code = 2


class ShapeError(ValidationError):
    """Matrix or sequence dimensions do not agree"""


class DataWindowError(ValidationError):
    """Not enough samples for the requested window"""


class ConfigError(ValidationError):
    """Invalid parameterization or experiment configuration"""


class UnsupportedModeError(ValidationError):
    """Operation needs data that this trajectory or mode does not carry"""


class NumericalError(ControlLearningError):
    exit_code = 3


class InsufficientExcitationError(NumericalError):
    """Fewer independent output rows than the state dimension"""


class PEViolationError(NumericalError):
    """Stacked data matrix lost full row rank"""


class InstabilityError(NumericalError):
    """Spectral radius of a transition matrix is not below one"""


class ConditioningError(NumericalError):
    """Linear system too ill-conditioned to solve reliably"""


class EvaluationError(NumericalError):
    """Q-function evaluation produced an unusable input block"""


class InitializationError(NumericalError):
    """Could not construct an initial stabilizing gain"""


class NonConvergenceError(NumericalError):
    """Iteration cap reached before the stop rule"""

    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history: List[float] = list(history)


class DimensionUndeterminedError(NumericalError):
    """Rank curve never levelled off"""

    def __init__(self, message: str, curve: Sequence[int] = ()):
        super().__init__(message)
        self.curve: List[int] = list(curve)
