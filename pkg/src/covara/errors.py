"""Exception hierarchy shared by every covara module."""


class CovaraError(Exception):
    """Base class; the CLI maps subclasses to diagnostics and exit codes."""

    #: short label of the violated assumption, used in CLI diagnostics
    assumption = ""


class DimensionMismatch(CovaraError, ValueError):
    pass


class EmptyValue(CovaraError):
    pass


class PointNotInSet(CovaraError, ValueError):
    pass


class JacobianUnavailable(CovaraError):
    pass


class UnsupportedMapClass(CovaraError):
    pass


class NotOnGraph(CovaraError, ValueError):
    assumption = "ybar not in F(xbar)"


class DegenerateSampling(CovaraError):
    pass


class InverseUnavailable(CovaraError):
    pass


class StepFailed(CovaraError):
    assumption = "covering step contract failed (alpha exceeds the local covering modulus)"


class NotContractive(CovaraError):
    assumption = "contraction assumption violated: ell >= alpha"


class LaunchConditionViolated(CovaraError):
    assumption = "launch condition violated: dist(ybar; G(xbar,p)) >= (alpha - ell) * r"


class MaxIterExceeded(CovaraError):
    assumption = "geometric contraction not observed (assumed moduli invalid)"


class TooFewPoints(CovaraError, ValueError):
    pass


class ParseError(CovaraError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ValidationError(CovaraError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
