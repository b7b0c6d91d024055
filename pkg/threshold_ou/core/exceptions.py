"""
Threshold OU - Exceptions
Error hierarchy shared by the services, the CLI and the HTTP surface
"""

from typing import Any, Optional


class ThresholdOUError(Exception):
    """Base class for every error raised by the package"""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidInputError(ThresholdOUError):
    """Arguments outside their legal range"""

    exit_code = 2


class QuadratureError(ThresholdOUError):
    """Adaptive quadrature ran out of subdivisions before meeting its tolerance"""


class NotErgodicError(ThresholdOUError):
    """Stationary quantities requested for parameters that are not ergodic"""

    exit_code = 3

    def __init__(self, message: str, regime: Optional[Any] = None):
        super().__init__(message)
        self.regime = regime


class DivergedError(ThresholdOUError):
    """Simulation left the divergence bound or produced a non-finite value"""

    exit_code = 4

    def __init__(self, step: int, path_index: Optional[int] = None, value: float = float("nan")):
        where = f" on path {path_index}" if path_index is not None else ""
        super().__init__(f"Simulation diverged at step {step}{where} (value {value})")
        self.step = step
        self.path_index = path_index
        self.value = value

    def __reduce__(self):
        # re-raised across worker processes
        return (type(self), (self.step, self.path_index, self.value))


class SideUnvisitedError(ThresholdOUError):
    """No observation falls on the requested side of the threshold"""

    exit_code = 5

    def __init__(self, side: str):
        super().__init__(f"No observations on the {side} side of the threshold")
        self.side = side


class DegenerateSideError(ThresholdOUError):
    """The normal equations of one side are singular"""

    exit_code = 5

    def __init__(self, side: str, det: float = 0.0):
        super().__init__(f"Degenerate {side} side (determinant {det:.3e})")
        self.side = side
        self.det = det


class NoValidCandidateError(ThresholdOUError):
    """Every threshold candidate was skipped"""

    exit_code = 5


class SingularCovarianceError(ThresholdOUError):
    """Covariance matrix is not positive definite"""

    exit_code = 6


class RateSeriesError(ThresholdOUError):
    """Malformed rate CSV"""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
