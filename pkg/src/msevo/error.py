from typing import Optional


class MseError(Exception):
    """
    Base of every error raised by the solver

    When caught by the shell, the command fails but the program is not interrupted.
    """

    def __init__(self, message: Optional[str] = None):
        super().__init__(message)


class InvalidArgumentError(MseError):
    """
    An argument does not satisfy the precondition of an operation (dimension, time range, ordering...)
    """


class DegenerateIntervalError(MseError):
    """
    A basis was requested on an interval shorter than the mesh tolerance
    """


class DegenerateSingularError(MseError):
    """
    The denominator of a singular feedback vanishes
    """


class MissingStateError(MseError):
    """
    A feedback arc was evaluated without a state
    """


class DivergenceError(MseError):
    """
    The integration produced a non-finite value
    """

    def __init__(self, time: float, what: str = "state"):
        super().__init__(f"Non-finite {what} encountered at t = {time!r}")
        self.time = time


class NoParametersError(MseError):
    """
    A parameter gradient was requested on an arc without parameters
    """


class StructuralInconsistencyError(MseError):
    """
    A node cannot be classified from the kinds of its neighboring arcs
    """


class StaleCandidateError(MseError):
    """
    A generation candidate is applied to a structure it was not scored against
    """


class LinesearchFailure(MseError):
    """
    No sufficient decrease has been found down to the minimum step
    """


class JacobianMismatchError(MseError):
    """
    The Jacobians supplied with a problem disagree with finite differences of its dynamics
    """


class ConfigError(MseError):
    """
    A run configuration cannot be parsed
    """
