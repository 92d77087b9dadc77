"""Exception hierarchy shared by the solver modules."""


class SLError(Exception):
    """Base class for every error raised by slpoly."""


class ValidationError(SLError, ValueError):
    """Invalid user input (bad coefficients, grids, files)."""


class NonMonic(ValidationError):
    pass


class CommonRoot(ValidationError):
    pass


class DegreeMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class PrefixMismatch(ValidationError):
    pass


class ForwardError(SLError):
    """Failure of the direct (forward) problem machinery."""


class Overflow(ForwardError):
    pass


class MultipleEigenvalue(ForwardError):
    pass


class MissedRoot(ForwardError):
    pass


class VanishingR1(ForwardError):
    pass


class ZeroAlphaDenominator(ForwardError):
    pass


class NearPole(ForwardError):
    pass


class NearbyEigenvalue(ForwardError):
    pass


class SingularSystem(SLError):
    """The main equation matrix is numerically singular."""


class DeltaTooLarge(SingularSystem):
    """Target data left the local solvability ball of the model problem."""

    def __init__(self, message, x_index=None, condition=None):
        super().__init__(message)
        self.x_index = x_index
        self.condition = condition


class ExtractionResidual(SLError):
    """A sampled rational function did not collapse to a polynomial."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
