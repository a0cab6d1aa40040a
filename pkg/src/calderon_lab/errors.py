"""Exception hierarchy shared by every module of the package."""


class CalderonLabError(Exception):
    """Base class for all errors raised by calderon_lab."""


class LatticeError(CalderonLabError, ValueError):
    """Invalid box geometry, lattice mismatch or parity precondition."""


class SupportError(CalderonLabError, ValueError):
    """Boundary data leaks onto the inaccessible part of the boundary."""


class NearSingularOperator(CalderonLabError):
    """Zero is (numerically) a Dirichlet eigenvalue of the discrete operator."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NonconvergentSolve(CalderonLabError):
    """A linear solve did not reach its residual tolerance."""


class NonpositiveConductivity(CalderonLabError, ValueError):
    """A conductivity sample is not bounded away from zero."""


class NonconvergentIteration(CalderonLabError):
    """The remainder fixed-point iteration is not a contraction."""


class SymbolBreakdown(CalderonLabError):
    """A shifted lattice frequency hit the characteristic set of the symbol."""


class ScheduleInfeasible(CalderonLabError):
    """A recovery schedule cannot be realised at the requested parameters."""

    def __init__(self, message, feasible_radius=None):
        super().__init__(message)
        self.feasible_radius = feasible_radius


class BoundaryAgreementError(CalderonLabError, ValueError):
    """Two conductivities do not share traces and normal derivatives on Gamma."""


class GeometryError(CalderonLabError, ValueError):
    """Kelvin transform geometry violation (origin, hull or frame mismatch)."""
