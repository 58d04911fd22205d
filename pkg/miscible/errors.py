"""Exceptions raised by the solver package.

Library code only raises; main.py turns these into log lines, a failure record
and an exit code.
"""


class MiscibleError(Exception):
    """Base class for every solver error."""


class ConfigError(MiscibleError):
    pass


class PointOutsideDomain(MiscibleError):
    def __init__(self, point):
        self.point = tuple(float(v) for v in point)
        super().__init__(f"Point {self.point} lies outside the unit square")


class PointNotInElement(MiscibleError):
    def __init__(self, elem: int, point):
        self.elem = int(elem)
        self.point = tuple(float(v) for v in point)
        super().__init__(f"Point {self.point} is not in element {self.elem}")


class UnsupportedDegree(MiscibleError):
    def __init__(self, degree: int):
        self.degree = degree
        super().__init__(f"No triangle quadrature rule for degree {degree}")


class KindMismatch(MiscibleError):
    pass


class NotConverged(MiscibleError):
    def __init__(self, iterations: int, residual: float, message: str = ""):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(
            message or f"Linear solve did not converge: {self.iterations} iterations, residual {self.residual:.3e}"
        )


class SingularSystem(MiscibleError):
    pass


class CoefficientOutOfBounds(MiscibleError):
    pass


class NonPositiveError(MiscibleError):
    pass


class ProblemInconsistent(MiscibleError):
    pass


class StudyAborted(MiscibleError):
    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)
