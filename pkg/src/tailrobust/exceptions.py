"""Exception hierarchy shared by the estimators."""


class TailRobustError(Exception):
    """Base class for all errors raised by tailrobust."""


class ConfigurationError(TailRobustError, ValueError):
    """Invalid user-supplied parameters (group counts, grids, step sizes)."""


class NoSolutionError(TailRobustError, ArithmeticError):
    """A tuning equation has no positive root for the given data.

    ``deficit`` is how far the attainable supremum of the left-hand side
    falls short of the required right-hand side (``nan`` when not applicable).
    """

    def __init__(self, message, deficit=float("nan")):
        super().__init__(message)
        self.deficit = deficit


class ConvergenceError(TailRobustError, ArithmeticError):
    """An iterative solver hit its iteration cap.

    ``residual`` carries the last residual measure (bracket width, gradient
    norm or KKT residual, depending on the solver).
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
