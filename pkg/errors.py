"""Exceptions raised by the factor analysis pipeline, each carrying the CLI exit code it maps to"""

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3


class RobustFactorError(Exception):
    exit_code = EXIT_SOLVER_FAILURE


class DimensionMismatch(RobustFactorError):
    pass


class NotPositiveDefinite(RobustFactorError):
    pass


class ConvergenceFailure(RobustFactorError):
    """The symmetric eigensolver did not converge (ill-conditioned input)"""


class SingularCovariance(RobustFactorError):
    pass


class InvalidTolerance(RobustFactorError):
    pass


class DegenerateTolerance(RobustFactorError):
    pass


class DeltaTooLarge(RobustFactorError):
    pass


class InfeasiblePoint(RobustFactorError):
    pass


class NumericalBreakdown(RobustFactorError):
    pass


class MaxIterations(RobustFactorError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InconsistentSystem(RobustFactorError):
    pass


class IndefiniteQ(RobustFactorError):
    pass


class EmptyKernel(RobustFactorError):
    pass


class ParseError(RobustFactorError):
    exit_code = EXIT_IO

    def __init__(self, message, path=None, row=None, column=None):
        location = ''
        if row is not None:
            location = f' (row {row}, column {column})'
        prefix = f'{path}: ' if path else ''
        super().__init__(f'{prefix}{message}{location}')
        self.path = path
        self.row = row
        self.column = column


class AsymmetryError(RobustFactorError):
    exit_code = EXIT_IO


class ResultWriteError(RobustFactorError):
    exit_code = EXIT_IO


class UsageError(RobustFactorError):
    exit_code = EXIT_USAGE
