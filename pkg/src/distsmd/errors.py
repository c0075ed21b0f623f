"""Exception hierarchy shared by every module."""


class DistSMDError(Exception):
    """Base class for all library errors."""


class LayoutError(DistSMDError, ValueError):
    """Variables, axes or dimensions do not line up."""


class NumericalError(DistSMDError, ArithmeticError):
    """A matrix lost positive-definiteness or a quantity became non-finite."""


class CurvatureError(NumericalError):
    """A variational update produced a non positive-definite information matrix."""


class BoundedGradientError(NumericalError):
    """A log-likelihood field is not finite (violates the bounded-gradient assumption)."""


class UnderflowError(NumericalError):
    """Geometric pooling hit a zero-mass cell with positive weight."""


class MessageDegeneracyError(NumericalError):
    """A belief-propagation message has a non positive-definite information matrix."""


class ConvergenceError(DistSMDError, RuntimeError):
    """An iterative routine did not converge; ``residual`` holds the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConnectivityError(DistSMDError, ValueError):
    """A graph or an induced subgraph is not connected."""


class AssignmentError(ConnectivityError):
    """The agents estimating a variable do not induce a connected subgraph."""

    def __init__(self, message, variable=None):
        super().__init__(message)
        self.variable = variable


class CoverageError(DistSMDError, ValueError):
    """Some variable is owned by no agent."""


class ProtocolError(DistSMDError, RuntimeError):
    """A round was executed with missing or malformed neighbour messages."""


class RoundError(DistSMDError, RuntimeError):
    """Wraps a failure inside the round engine with the round index attached."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
