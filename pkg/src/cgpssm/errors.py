"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: parameter errors exit 2, data errors
exit 3, numerical failures exit 4.
"""


class CgpsError(Exception):
    """Base class for all package errors."""


class ParameterError(CgpsError, ValueError):
    """An argument or configuration value is out of its valid domain."""


class DataError(CgpsError, ValueError):
    """Input data violate a schema or a structural precondition."""


class NumericalError(CgpsError, ArithmeticError):
    """A numerical routine failed (factorization, convergence, ...)."""


class ConvergenceError(NumericalError):
    pass


class SeparationError(ConvergenceError):
    """Logistic fit diverges because the classes are (quasi-)separable."""


class RankDeficiencyError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
